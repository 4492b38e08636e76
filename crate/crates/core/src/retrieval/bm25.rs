//! Okapi BM25 over text chunks.
//!
//! ```text
//! score(u, q) = Σ_{t ∈ q} idf(t) · tf(t,u)·(k1+1) / (tf(t,u) + k1·(1 − b + b·|u|/avgdl))
//! idf(t)      = max(0, ln((N − n_t + 0.5) / (n_t + 0.5)))
//! ```
//!
//! Query tokens are summed with multiplicity. Terms present in more than half
//! of the units contribute nothing rather than a negative amount.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::hit::{rank_top_k, Candidate, Modality, ScoredHit};
use super::RetrievalError;
use crate::ingest::TextChunk;

/// Lowercase, split on anything that is not alphanumeric, drop empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.5, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    /// Index into `Bm25Index::units`.
    pub unit: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitInfo {
    pub unit_id: String,
    pub doc_id: String,
    /// Token count.
    pub len: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    pub params: Bm25Params,
    pub units: Vec<UnitInfo>,
    pub postings: BTreeMap<String, Vec<Posting>>,
    pub avg_doc_len: f64,
}

impl Bm25Index {
    pub fn build(chunks: &[TextChunk], params: Bm25Params) -> Result<Self, RetrievalError> {
        if chunks.is_empty() {
            return Err(RetrievalError::EmptyInput("bm25 index needs at least one chunk"));
        }
        let mut units = Vec::with_capacity(chunks.len());
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        for (i, c) in chunks.iter().enumerate() {
            let tokens = tokenize(&c.text);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    unit: i as u32,
                    tf: count,
                });
            }
            units.push(UnitInfo {
                unit_id: c.chunk_id.clone(),
                doc_id: c.doc_id.clone(),
                len: tokens.len() as u32,
            });
        }
        Ok(Self::from_parts(params, units, postings))
    }

    fn from_parts(
        params: Bm25Params,
        units: Vec<UnitInfo>,
        postings: BTreeMap<String, Vec<Posting>>,
    ) -> Self {
        let total: u64 = units.iter().map(|u| u.len as u64).sum();
        let avg_doc_len = if units.is_empty() {
            0.0
        } else {
            total as f64 / units.len() as f64
        };
        Self {
            params,
            units,
            postings,
            avg_doc_len,
        }
    }

    pub fn unit_count(&self) -> usize {
        self.units.len()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.unit_count() as f64;
        let df = self.doc_freq(term) as f64;
        ((n - df + 0.5) / (df + 0.5)).ln().max(0.0)
    }

    /// Index over the units of the given documents only, with document
    /// frequencies and average length recomputed for that collection.
    pub fn restrict(&self, doc_ids: &HashSet<String>) -> Self {
        let mut remap = vec![None; self.units.len()];
        let mut units = Vec::new();
        for (i, u) in self.units.iter().enumerate() {
            if doc_ids.contains(&u.doc_id) {
                remap[i] = Some(units.len() as u32);
                units.push(u.clone());
            }
        }
        let postings = self
            .postings
            .iter()
            .filter_map(|(term, list)| {
                let kept: Vec<Posting> = list
                    .iter()
                    .filter_map(|p| {
                        remap[p.unit as usize].map(|unit| Posting { unit, tf: p.tf })
                    })
                    .collect();
                (!kept.is_empty()).then(|| (term.clone(), kept))
            })
            .collect();
        Self::from_parts(self.params, units, postings)
    }

    /// Raw BM25 score of every unit with a positive score.
    pub fn scores(&self, query: &str) -> Vec<(usize, f64)> {
        let Bm25Params { k1, b } = self.params;
        let avg = if self.avg_doc_len > 0.0 { self.avg_doc_len } else { 1.0 };
        let mut acc = vec![0.0f64; self.units.len()];
        for term in tokenize(query) {
            let Some(list) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(&term);
            if idf == 0.0 {
                continue;
            }
            for p in list {
                let tf = p.tf as f64;
                let len = self.units[p.unit as usize].len as f64;
                acc[p.unit as usize] += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avg));
            }
        }
        acc.into_iter()
            .enumerate()
            .filter(|(_, s)| *s > 0.0)
            .collect()
    }

    /// Top-k units by score. Units scoring zero are never returned, so the
    /// result may be shorter than `k`.
    pub fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredHit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let candidates = self
            .scores(query)
            .into_iter()
            .map(|(i, score)| Candidate {
                unit_id: &self.units[i].unit_id,
                doc_id: &self.units[i].doc_id,
                page_no: None,
                score,
            })
            .collect();
        Ok(rank_top_k(candidates, k, Modality::Text))
    }
}
