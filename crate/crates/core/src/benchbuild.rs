//! Benchmark construction: distractor augmentation, query-rewrite prompts
//! and question de-duplication.

use std::collections::HashSet;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Corpus, Document, QaSample};
use crate::eval::token_f1;
use crate::llm::{GenRequest, GenSettings, Message};
use crate::pipeline::prompt::QUESTION_LABEL;

pub const QUERY_AUG_TAG: &str = "Rewrite the question into 5 more specific variants.";
pub const METADATA_TITLE_LABEL: &str = "Document title:";
pub const REWRITE_COUNT: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("average page count must be positive, got {0}")]
    BadPageAverage(f64),
    #[error("sample `{sample_id}` needs up to {needed} distractors but the pool offers {available}")]
    PoolTooSmall {
        sample_id: String,
        needed: usize,
        available: usize,
    },
    #[error("document `{0}` has neither a title nor a caption")]
    NoMetadata(String),
}

/// Inclusive range of the distractor count: ⌊50/p⌋ to ⌊200/p⌋, both
/// clamped to at least 1.
pub fn distractor_range(p_avg: f64) -> Result<(usize, usize), BenchError> {
    if !(p_avg > 0.0 && p_avg.is_finite()) {
        return Err(BenchError::BadPageAverage(p_avg));
    }
    let lo = ((50.0 / p_avg).floor() as usize).max(1);
    let hi = ((200.0 / p_avg).floor() as usize).max(lo);
    Ok((lo, hi))
}

/// Per-sample generator: the run seed and the sample id hashed together.
pub fn sample_rng(seed: u64, sample_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(sample_id.as_bytes());
    let digest = h.finalize();
    ChaCha8Rng::from_seed(digest.into())
}

/// Draws the distractor count uniformly from the clamped range.
pub fn draw_count(rng: &mut impl Rng, range: (usize, usize)) -> usize {
    rng.random_range(range.0..=range.1)
}

/// Appends uniformly drawn distractors, sampled without replacement from
/// pool documents that are neither gold nor already in the sample.
pub fn sample_distractors(sample: &QaSample, pool: &[Document], p_avg: f64, seed: u64) -> Result<QaSample, BenchError> {
    let range = distractor_range(p_avg)?;
    let taken: HashSet<&str> = sample
        .doc_ids
        .iter()
        .chain(&sample.gold_doc_ids)
        .map(String::as_str)
        .collect();
    let candidates: Vec<&Document> = pool.iter().filter(|d| !taken.contains(d.doc_id.as_str())).collect();
    if candidates.len() < range.1 {
        return Err(BenchError::PoolTooSmall {
            sample_id: sample.sample_id.clone(),
            needed: range.1,
            available: candidates.len(),
        });
    }
    let mut rng = sample_rng(seed, &sample.sample_id);
    let l = draw_count(&mut rng, range);
    let mut out = sample.clone();
    out.doc_ids
        .extend(sample_indices(&mut rng, candidates.len(), l).into_iter().map(|i| candidates[i].doc_id.clone()));
    Ok(out)
}

/// Mean page count of the documents.
pub fn mean_pages(documents: &[Document]) -> f64 {
    if documents.is_empty() {
        return 0.0;
    }
    documents.iter().map(|d| f64::from(d.page_count)).sum::<f64>() / documents.len() as f64
}

/// Augments every sample of `corpus`, drawing distractors from all of its
/// documents.
pub fn build_benchmark(corpus: &Corpus, p_avg: f64, seed: u64) -> Result<Corpus, BenchError> {
    let samples = corpus
        .samples()
        .iter()
        .map(|s| sample_distractors(s, corpus.documents(), p_avg, seed))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Corpus::new(corpus.documents().to_vec(), samples))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DocMetadata {
    pub doc_id: String,
    pub title: Option<String>,
    pub caption: Option<String>,
}

pub fn build_query_aug_prompt(question: &str, gold_answer: &str, meta: &DocMetadata, settings: &GenSettings) -> Result<GenRequest, BenchError> {
    if meta.title.is_none() && meta.caption.is_none() {
        return Err(BenchError::NoMetadata(meta.doc_id.clone()));
    }
    let mut body = format!("{QUESTION_LABEL} {question}\nAnswer: {gold_answer}\n");
    if let Some(t) = &meta.title {
        body.push_str(&format!("{METADATA_TITLE_LABEL} {t}\n"));
    }
    if let Some(c) = &meta.caption {
        body.push_str(&format!("Identifying caption: {c}\n"));
    }
    body.push_str(&format!(
        "\n{QUERY_AUG_TAG}\n\
         Each variant must be answerable only with this document, so mention what identifies it.\n\
         The answer to the generated question must match the provided answer.\n\
         Reply with a numbered list from 1 to {REWRITE_COUNT}, one variant per item, formatted as `1) <question>`."
    ));
    Ok(GenRequest::with_settings(vec![Message::user(body)], vec![], settings))
}

/// Items of a numbered list `1) ...`, `2. ...`, on one line or many. Numbers
/// must run 1, 2, 3, ... in order; other digits stay inside items.
pub fn parse_numbered_list(text: &str) -> Vec<String> {
    let re = Regex::new(r"(?m)(?:^|\s)(\d{1,2})[.)]\s+").expect("valid pattern");
    let mut marks: Vec<(usize, usize)> = Vec::new();
    let mut expected = 1usize;
    for cap in re.captures_iter(text) {
        let whole = cap.get(0).expect("match");
        if cap[1].parse::<usize>().ok() == Some(expected) {
            marks.push((whole.start(), whole.end()));
            expected += 1;
        }
    }
    marks
        .iter()
        .enumerate()
        .map(|(i, &(_, body))| {
            let end = marks.get(i + 1).map(|m| m.0).unwrap_or(text.len());
            text[body..end].trim().to_string()
        })
        .filter(|s| !s.is_empty())
        .collect()
}

/// Greedy pass in sample-id order; a question is dropped when its token F1
/// with any kept question reaches `threshold`.
pub fn dedup_questions(samples: &[QaSample], threshold: f64) -> (Vec<QaSample>, Vec<String>) {
    let mut ordered: Vec<&QaSample> = samples.iter().collect();
    ordered.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let mut kept: Vec<QaSample> = Vec::new();
    let mut dropped = Vec::new();
    for s in ordered {
        if kept.iter().any(|k| token_f1(&s.question, &k.question) >= threshold) {
            dropped.push(s.sample_id.clone());
        } else {
            kept.push(s.clone());
        }
    }
    (kept, dropped)
}

/// Review rows: one per candidate rewrite, with an empty `selected` column
/// for the reviewer.
pub fn write_worksheet(rows: &[(String, String, Vec<String>)]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sample_id", "original_question", "candidate_no", "candidate", "selected"])?;
    for (sample_id, question, candidates) in rows {
        for (i, c) in candidates.iter().enumerate() {
            w.write_record([sample_id.as_str(), question.as_str(), &(i + 1).to_string(), c.as_str(), ""])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("utf-8 fields"))
}
