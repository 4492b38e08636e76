//! Answer and retrieval metrics, and run-level reports.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnswerType, Corpus, QaSample, RunMode, RunRecord};
use crate::ingest::TextChunk;
use crate::pipeline::PipelineOutput;
use crate::retrieval::{Modality, ScoredHit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("gold answer `{0}` of a binary sample is not yes/no")]
    BinaryGold(String),
    #[error("run record references unknown sample `{0}`")]
    UnknownSample(String),
    #[error("sample `{0}` keeps no distractor once its gold documents are removed")]
    NoDistractors(String),
    #[error("unknown metric `{0}` (expected f1, anlcs, docid or refusal)")]
    UnknownMetric(String),
}

/// Maps yes/no-like answers to `"yes"` or `"no"`.
pub fn normalize_binary(text: &str) -> Option<&'static str> {
    let t = text
        .trim()
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .trim()
        .to_ascii_lowercase();
    match t.as_str() {
        "yes" | "true" | "correct" => Some("yes"),
        "no" | "false" | "incorrect" => Some("no"),
        _ => None,
    }
}

/// Character-level longest common subsequence length.
pub fn lcs_len(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut row = vec![0usize; b.len() + 1];
    for &ca in &a {
        let mut diag = 0;
        for (j, &cb) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if ca == cb { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LcsNormalization {
    /// Divide by the gold snippet's length.
    #[default]
    Gold,
    Retrieved,
    Longer,
}

/// Mean over gold snippets of the best normalized LCS against any
/// retrieved unit. Empty retrieval scores 0.
pub fn anlcs_with(retrieved: &[&str], gold: &[&str], norm: LcsNormalization) -> f64 {
    if retrieved.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let per_snippet = gold.iter().map(|g| {
        let gl = g.chars().count();
        retrieved
            .iter()
            .map(|u| {
                let denom = match norm {
                    LcsNormalization::Gold => gl,
                    LcsNormalization::Retrieved => u.chars().count(),
                    LcsNormalization::Longer => gl.max(u.chars().count()),
                };
                if denom == 0 {
                    0.0
                } else {
                    lcs_len(g, u) as f64 / denom as f64
                }
            })
            .fold(0.0, f64::max)
    });
    per_snippet.sum::<f64>() / gold.len() as f64
}

pub fn anlcs(retrieved: &[&str], gold: &[&str]) -> f64 {
    anlcs_with(retrieved, gold, LcsNormalization::Gold)
}

/// At least ⌈k/2⌉ retrieved units come from a gold document.
pub fn doc_identified(hits: &[ScoredHit], gold_doc_ids: &[String], k: usize) -> bool {
    let from_gold = hits.iter().filter(|h| gold_doc_ids.contains(&h.doc_id)).count();
    from_gold >= k.div_ceil(2)
}

/// Lowercase, punctuation stripped, articles dropped, whitespace split.
pub fn answer_tokens(text: &str) -> Vec<String> {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    lowered
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .map(str::to_string)
        .collect()
}

/// Word-overlap F1 over token multisets.
pub fn token_f1(prediction: &str, gold: &str) -> f64 {
    let p = answer_tokens(prediction);
    let g = answer_tokens(gold);
    match (p.is_empty(), g.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()).filter(|c| **c > 0) {
            *c -= 1;
            overlap += 1;
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / p.len() as f64;
    let recall = overlap as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// F1 that scores binary answers by yes/no agreement.
pub fn uda_f1(prediction: &str, gold: &str, answer_type: AnswerType) -> Result<f64, EvalError> {
    match answer_type {
        AnswerType::Binary => {
            let g = normalize_binary(gold).ok_or_else(|| EvalError::BinaryGold(gold.to_string()))?;
            Ok(if normalize_binary(prediction) == Some(g) { 1.0 } else { 0.0 })
        }
        AnswerType::ShortText | AnswerType::FreeText => Ok(token_f1(prediction, gold)),
    }
}

pub fn refusal_rate(records: &[RunRecord]) -> f64 {
    if records.is_empty() {
        log::warn!("refusal rate of an empty run is reported as 0");
        return 0.0;
    }
    records.iter().filter(|r| r.refused).count() as f64 / records.len() as f64
}

/// Drops the gold documents from the sample's retrieval set.
pub fn remove_oracle(sample: &QaSample) -> Result<QaSample, EvalError> {
    let mut out = sample.clone();
    out.doc_ids.retain(|d| !sample.gold_doc_ids.contains(d));
    if out.doc_ids.is_empty() {
        return Err(EvalError::NoDistractors(sample.sample_id.clone()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSet {
    pub f1: bool,
    pub anlcs: bool,
    pub docid: bool,
    pub refusal: bool,
}

impl Default for MetricSet {
    fn default() -> Self {
        Self {
            f1: true,
            anlcs: true,
            docid: true,
            refusal: true,
        }
    }
}

impl std::str::FromStr for MetricSet {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut m = MetricSet {
            f1: false,
            anlcs: false,
            docid: false,
            refusal: false,
        };
        for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            match name {
                "f1" => m.f1 = true,
                "anlcs" => m.anlcs = true,
                "docid" => m.docid = true,
                "refusal" => m.refusal = true,
                other => return Err(EvalError::UnknownMetric(other.to_string())),
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetricConfig {
    pub metrics: MetricSet,
    pub lcs_normalization: LcsNormalization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub sample_id: String,
    pub mode: RunMode,
    pub answer_type: AnswerType,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anlcs_text: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anlcs_visual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub docid_text: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub docid_visual: Option<bool>,
    pub refused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anlcs_text: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anlcs_visual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub docid_text: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub docid_visual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refusal_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub modes: Vec<RunMode>,
    pub config: MetricConfig,
    pub aggregates: Aggregates,
    pub per_sample: Vec<SampleScores>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn unit_texts<'a>(out: &PipelineOutput, corpus: &'a Corpus, chunks: &'a HashMap<&str, &TextChunk>) -> Vec<&'a str> {
    out.hits
        .iter()
        .filter_map(|h| match h.modality {
            Modality::Text => chunks.get(h.unit_id.as_str()).map(|c| c.text.as_str()),
            Modality::Visual => corpus.page(&h.doc_id, h.page_no?).map(|p| p.text.as_str()),
        })
        .collect()
}

/// Scores every record against its sample. Aggregates are plain means of
/// the per-sample values that apply.
pub fn evaluate_run(
    records: &[RunRecord],
    corpus: &Corpus,
    chunks: &[TextChunk],
    config: &MetricConfig,
) -> Result<EvalReport, EvalError> {
    let chunk_map: HashMap<&str, &TextChunk> = chunks.iter().map(|c| (c.chunk_id.as_str(), c)).collect();
    let m = config.metrics;
    let mut per_sample = Vec::with_capacity(records.len());
    for r in records {
        let sample = corpus
            .sample(&r.sample_id)
            .ok_or_else(|| EvalError::UnknownSample(r.sample_id.clone()))?;
        let snippets = sample.evidence_snippets();
        let anlcs_of = |out: &Option<PipelineOutput>| {
            let out = out.as_ref().filter(|_| m.anlcs && !snippets.is_empty())?;
            Some(anlcs_with(&unit_texts(out, corpus, &chunk_map), &snippets, config.lcs_normalization))
        };
        let docid_of = |out: &Option<PipelineOutput>| {
            // a failed retrieval has nothing to judge
            let out = out.as_ref().filter(|o| m.docid && !(o.degraded && o.hits.is_empty()))?;
            Some(doc_identified(&out.hits, &sample.gold_doc_ids, out.k))
        };
        per_sample.push(SampleScores {
            sample_id: r.sample_id.clone(),
            mode: r.mode,
            answer_type: sample.answer_type,
            f1: if m.f1 {
                Some(uda_f1(&r.final_answer, &sample.gold_answer, sample.answer_type)?)
            } else {
                None
            },
            anlcs_text: anlcs_of(&r.text),
            anlcs_visual: anlcs_of(&r.visual),
            docid_text: docid_of(&r.text),
            docid_visual: docid_of(&r.visual),
            refused: r.refused,
        });
    }
    let as_f = |b: bool| if b { 1.0 } else { 0.0 };
    let aggregates = Aggregates {
        samples: per_sample.len(),
        f1: mean(per_sample.iter().filter_map(|s| s.f1)),
        anlcs_text: mean(per_sample.iter().filter_map(|s| s.anlcs_text)),
        anlcs_visual: mean(per_sample.iter().filter_map(|s| s.anlcs_visual)),
        docid_text: mean(per_sample.iter().filter_map(|s| s.docid_text.map(as_f))),
        docid_visual: mean(per_sample.iter().filter_map(|s| s.docid_visual.map(as_f))),
        refusal_rate: m.refusal.then(|| refusal_rate(records)),
    };
    let mut modes: Vec<RunMode> = Vec::new();
    for r in records {
        if !modes.contains(&r.mode) {
            modes.push(r.mode);
        }
    }
    modes.sort_by_key(|m| m.as_str());
    Ok(EvalReport {
        modes,
        config: *config,
        aggregates,
        per_sample,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// One row per sample; inapplicable cells are empty.
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "sample_id", "mode", "answer_type", "f1", "anlcs_text", "anlcs_visual", "docid_text", "docid_visual", "refused",
        ])?;
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let b = |v: Option<bool>| v.map(|x| u8::from(x).to_string()).unwrap_or_default();
        for s in &self.per_sample {
            w.write_record([
                s.sample_id.clone(),
                s.mode.as_str().to_string(),
                s.answer_type.as_str().to_string(),
                f(s.f1),
                f(s.anlcs_text),
                f(s.anlcs_visual),
                b(s.docid_text),
                b(s.docid_visual),
                u8::from(s.refused).to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv of utf-8 fields is utf-8"))
    }
}
