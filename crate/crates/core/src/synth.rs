//! Synthetic needle-in-a-haystack collections.
//!
//! Every document has two topic words repeated on each of its pages. Sample
//! `i` plants one evidence sentence on a page of document `i`:
//! `The A B C D opens with CODE.` and asks `What opens the A B C D?`. Topic
//! words are four syllables long and filler words two, so they never
//! collide.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AnswerType, Corpus, Document, EvidenceLocator, QaSample};

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ne", "ru", "sa", "to", "vi", "ze", "po", "da", "fe", "gu", "hi", "jo", "ly", "mo", "nu", "pe",
    "ri", "su", "te", "wa", "xo",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub documents: usize,
    pub pages_per_document: usize,
    pub filler_words_per_page: usize,
    /// At most one per document.
    pub samples: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            documents: 20,
            pages_per_document: 8,
            filler_words_per_page: 140,
            samples: 20,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedFact {
    pub sample_id: String,
    pub doc_id: String,
    pub page_no: u32,
    pub code: String,
    pub sentence: String,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub manifest: PathBuf,
    pub corpus: Corpus,
    pub facts: Vec<PlantedFact>,
}

fn word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    (0..syllables).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect()
}

fn unique_word(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> String {
    loop {
        let w = word(rng, 4);
        if used.insert(w.clone()) {
            return w;
        }
    }
}

fn filler_sentence(rng: &mut ChaCha8Rng, vocab: &[String], words: usize) -> String {
    let mut s: Vec<&str> = (0..words).map(|_| vocab[rng.random_range(0..vocab.len())].as_str()).collect();
    s.insert(0, "Notes");
    format!("{}.", s.join(" "))
}

/// Writes `<dir>/docs/*.txt` (pages separated by form feeds) and
/// `<dir>/manifest.jsonl`.
pub fn write_synthetic(dir: &Path, cfg: &SynthConfig) -> std::io::Result<SynthCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab: Vec<String> = {
        let mut set = HashSet::new();
        while set.len() < 300 {
            set.insert(word(&mut rng, 2));
        }
        let mut v: Vec<String> = set.into_iter().collect();
        v.sort();
        v
    };
    let mut used = HashSet::new();
    let docs_dir = dir.join("docs");
    fs::create_dir_all(&docs_dir)?;

    let mut documents = Vec::new();
    let mut samples = Vec::new();
    let mut facts = Vec::new();
    let doc_ids: Vec<String> = (0..cfg.documents).map(|i| format!("doc{i:03}")).collect();
    for (i, doc_id) in doc_ids.iter().enumerate() {
        let (a, b) = (unique_word(&mut rng, &mut used), unique_word(&mut rng, &mut used));
        let planted = (i < cfg.samples).then(|| {
            let (c, d) = (unique_word(&mut rng, &mut used), unique_word(&mut rng, &mut used));
            let code = format!("KV{:04}", rng.random_range(0..10_000));
            let page_no = rng.random_range(1..=cfg.pages_per_document as u32);
            (c, d, code, page_no)
        });
        let mut pages = Vec::new();
        for p in 1..=cfg.pages_per_document as u32 {
            let mut sentences = Vec::new();
            let per_sentence = 10;
            let n = cfg.filler_words_per_page.div_ceil(per_sentence);
            for s in 0..n {
                if s % 2 == 0 {
                    sentences.push(format!("The {a} {b} record continues."));
                }
                sentences.push(filler_sentence(&mut rng, &vocab, per_sentence));
            }
            if let Some((c, d, code, page_no)) = &planted {
                if *page_no == p {
                    let sentence = format!("The {a} {b} {c} {d} opens with {code}.");
                    let at = rng.random_range(0..=sentences.len());
                    sentences.insert(at, format!("{sentence} Only the {c} {d} opens with {code}."));
                    let sample_id = format!("q{i:03}");
                    facts.push(PlantedFact {
                        sample_id: sample_id.clone(),
                        doc_id: doc_id.clone(),
                        page_no: p,
                        code: code.clone(),
                        sentence: sentence.trim_end_matches('.').to_string(),
                    });
                    samples.push(QaSample {
                        sample_id,
                        question: format!("What opens the {a} {b} {c} {d}?"),
                        doc_ids: doc_ids.clone(),
                        gold_doc_ids: vec![doc_id.clone()],
                        gold_answer: code.clone(),
                        gold_evidence: vec![
                            EvidenceLocator::Page {
                                doc_id: doc_id.clone(),
                                page_no: p,
                            },
                            EvidenceLocator::Snippet(sentence),
                        ],
                        answer_type: AnswerType::ShortText,
                    });
                }
            }
            pages.push(sentences.join(" "));
        }
        let file = format!("{doc_id}.txt");
        fs::write(docs_dir.join(&file), pages.join("\u{c}"))?;
        documents.push(Document {
            doc_id: doc_id.clone(),
            source_path: format!("docs/{file}"),
            page_count: cfg.pages_per_document as u32,
            title: Some(format!("The {a} {b} record")),
            pages: vec![],
        });
    }
    let corpus = Corpus::new(documents, samples);
    let manifest = dir.join("manifest.jsonl");
    corpus
        .save(&manifest)
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(SynthCorpus { manifest, corpus, facts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_manifest, validate_corpus};

    #[test]
    fn writes_a_valid_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            documents: 4,
            samples: 3,
            ..SynthConfig::default()
        };
        let s = write_synthetic(dir.path(), &cfg).unwrap();
        let loaded = load_manifest(&s.manifest).unwrap();
        assert!(validate_corpus(&loaded).is_empty());
        assert_eq!(loaded.samples().len(), 3);
        assert_eq!(s.facts.len(), 3);
        let text = fs::read_to_string(dir.path().join("docs/doc000.txt")).unwrap();
        assert_eq!(text.split('\u{c}').count(), 8);
        assert!(text.contains(&s.facts[0].code));
    }

    #[test]
    fn same_seed_same_files() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let cfg = SynthConfig::default();
        write_synthetic(a.path(), &cfg).unwrap();
        write_synthetic(b.path(), &cfg).unwrap();
        for f in ["manifest.jsonl", "docs/doc007.txt"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        }
    }
}
