use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::hit::{rank_top_k, Candidate, Modality, ScoredHit};
use super::provider::{Embedder, TextQuery};
use super::RetrievalError;
use crate::ingest::TextChunk;

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

pub(crate) fn norm(v: &[f32]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales `v` to unit length; `None` for the zero vector.
pub fn normalize(v: &[f32]) -> Option<Vec<f32>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    Some(v.iter().map(|x| (*x as f64 / n) as f32).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseUnit {
    pub unit_id: String,
    pub doc_id: String,
    pub vector: Vec<f32>,
}

/// One unit-normalized vector per chunk, searched by exact full scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseIndex {
    pub provider_id: String,
    pub dim: usize,
    pub units: Vec<DenseUnit>,
}

impl DenseIndex {
    /// Embeds every chunk. Any provider failure aborts the build.
    pub fn build(chunks: &[TextChunk], embedder: &Embedder) -> Result<Self, RetrievalError> {
        if chunks.is_empty() {
            return Err(RetrievalError::EmptyInput("dense index needs at least one chunk"));
        }
        let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
        let vectors = embedder.embed_documents(&texts)?;
        let units = chunks
            .iter()
            .zip(vectors)
            .map(|(c, v)| {
                Ok(DenseUnit {
                    unit_id: c.chunk_id.clone(),
                    doc_id: c.doc_id.clone(),
                    vector: normalize(&v).ok_or_else(|| RetrievalError::ZeroVector(c.chunk_id.clone()))?,
                })
            })
            .collect::<Result<_, RetrievalError>>()?;
        Ok(Self {
            provider_id: embedder.handshake().provider_id.clone(),
            dim: embedder.handshake().dim,
            units,
        })
    }

    /// Top-k by cosine similarity. The query does not need to be
    /// normalized; a zero query scores every unit 0.
    pub fn search(
        &self,
        query: &[f32],
        k: usize,
        scope: Option<&HashSet<String>>,
    ) -> Result<Vec<ScoredHit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if query.len() != self.dim {
            return Err(RetrievalError::DimMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        let qn = norm(query);
        let candidates = self
            .units
            .iter()
            .filter(|u| scope.is_none_or(|s| s.contains(&u.doc_id)))
            .map(|u| Candidate {
                unit_id: &u.unit_id,
                doc_id: &u.doc_id,
                page_no: None,
                score: if qn > 0.0 { dot(query, &u.vector) / qn } else { 0.0 },
            })
            .collect();
        Ok(rank_top_k(candidates, k, Modality::Text))
    }

    /// Like [`search`](Self::search) but refuses queries embedded by another
    /// provider.
    pub fn search_query(
        &self,
        query: &TextQuery,
        k: usize,
        scope: Option<&HashSet<String>>,
    ) -> Result<Vec<ScoredHit>, RetrievalError> {
        if query.provider_id != self.provider_id {
            return Err(RetrievalError::ProviderMismatch {
                index: self.provider_id.clone(),
                query: query.provider_id.clone(),
            });
        }
        self.search(&query.vector, k, scope)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index(vectors: &[(&str, Vec<f32>)]) -> DenseIndex {
        DenseIndex {
            provider_id: "test".into(),
            dim: vectors[0].1.len(),
            units: vectors
                .iter()
                .map(|(id, v)| DenseUnit {
                    unit_id: id.to_string(),
                    doc_id: "d".into(),
                    vector: normalize(v).unwrap(),
                })
                .collect(),
        }
    }

    #[test]
    fn normalizes_three_four() {
        assert_eq!(normalize(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
        assert!(normalize(&[0.0, 0.0]).is_none());
    }

    #[test]
    fn exact_match_ranks_first() {
        let idx = index(&[("a", vec![1.0, 0.0, 0.0]), ("b", vec![0.0, 1.0, 0.0]), ("c", vec![1.0, 1.0, 0.0])]);
        let hits = idx.search(&[0.0, 1.0, 0.0], 3, None).unwrap();
        assert_eq!(hits[0].unit_id, "b");
        assert!((hits[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_query_scores_zero() {
        let idx = index(&[("a", vec![1.0, 0.0, 0.0]), ("b", vec![0.0, 1.0, 0.0])]);
        let hits = idx.search(&[0.0, 0.0, 2.0], 5, None).unwrap();
        assert_eq!(hits.len(), 2);
        assert!(hits.iter().all(|h| h.score == 0.0));
        assert_eq!(hits[0].unit_id, "a");
    }

    #[test]
    fn dim_mismatch_is_an_error() {
        let idx = index(&[("a", vec![1.0, 0.0])]);
        assert!(matches!(
            idx.search(&[1.0], 1, None),
            Err(RetrievalError::DimMismatch { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn foreign_provider_is_refused() {
        let idx = index(&[("a", vec![1.0, 0.0])]);
        let q = TextQuery {
            provider_id: "other".into(),
            vector: vec![1.0, 0.0],
        };
        assert!(matches!(
            idx.search_query(&q, 1, None),
            Err(RetrievalError::ProviderMismatch { .. })
        ));
    }

    #[test]
    fn scope_filters_documents() {
        let mut idx = index(&[("a", vec![1.0, 0.0]), ("b", vec![1.0, 0.1])]);
        idx.units[1].doc_id = "other".into();
        let scope = HashSet::from(["other".to_string()]);
        let hits = idx.search(&[1.0, 0.0], 5, Some(&scope)).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].unit_id, "b");
    }
}
