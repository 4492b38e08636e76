//! Late-interaction page retrieval: every page is a bag of token vectors and
//! a query scores a page by summing, over its own token vectors, the best dot
//! product against the page.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::dense::dot;
use super::hit::{page_unit_id, rank_top_k, Candidate, Modality, ScoredHit};
use super::provider::{Embedder, MultiQuery, PageInput};
use super::RetrievalError;

/// `Σ_i max_j q_i · d_j`.
pub fn maxsim_score(query: &[Vec<f32>], page: &[Vec<f32>]) -> Result<f64, RetrievalError> {
    if query.is_empty() || page.is_empty() {
        return Err(RetrievalError::EmptyMatrix);
    }
    let dim = query[0].len();
    if let Some(bad) = query.iter().chain(page).find(|v| v.len() != dim) {
        return Err(RetrievalError::DimMismatch {
            expected: dim,
            actual: bad.len(),
        });
    }
    Ok(query
        .iter()
        .map(|q| {
            page.iter()
                .map(|d| dot(q, d))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageVectors {
    pub unit_id: String,
    pub doc_id: String,
    pub page_no: u32,
    /// `n_tokens × dim`, at least one row.
    pub vectors: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiVectorIndex {
    pub provider_id: String,
    pub dim: usize,
    pub pages: Vec<PageVectors>,
}

/// A page handed to the index builder.
#[derive(Debug, Clone)]
pub struct PageSource {
    pub doc_id: String,
    pub page_no: u32,
    pub input: PageInput,
}

impl MultiVectorIndex {
    pub fn build(pages: &[PageSource], embedder: &Embedder) -> Result<Self, RetrievalError> {
        if pages.is_empty() {
            return Err(RetrievalError::EmptyInput("multivector index needs at least one page"));
        }
        let inputs: Vec<PageInput> = pages.iter().map(|p| p.input.clone()).collect();
        let matrices = embedder.embed_pages(&inputs)?;
        let pages = pages
            .iter()
            .zip(matrices)
            .map(|(p, vectors)| {
                let unit_id = page_unit_id(&p.doc_id, p.page_no);
                if vectors.is_empty() {
                    return Err(RetrievalError::WrongShape(format!("{unit_id} has no token vectors")));
                }
                Ok(PageVectors {
                    unit_id,
                    doc_id: p.doc_id.clone(),
                    page_no: p.page_no,
                    vectors,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            provider_id: embedder.handshake().provider_id.clone(),
            dim: embedder.handshake().dim,
            pages,
        })
    }

    pub fn search(
        &self,
        query: &[Vec<f32>],
        k: usize,
        scope: Option<&HashSet<String>>,
    ) -> Result<Vec<ScoredHit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if self.pages.is_empty() {
            return Err(RetrievalError::EmptyInput("multivector index is empty"));
        }
        if let Some(bad) = query.iter().find(|v| v.len() != self.dim) {
            return Err(RetrievalError::DimMismatch {
                expected: self.dim,
                actual: bad.len(),
            });
        }
        let candidates = self
            .pages
            .iter()
            .filter(|p| scope.is_none_or(|s| s.contains(&p.doc_id)))
            .map(|p| {
                Ok(Candidate {
                    unit_id: &p.unit_id,
                    doc_id: &p.doc_id,
                    page_no: Some(p.page_no),
                    score: maxsim_score(query, &p.vectors)?,
                })
            })
            .collect::<Result<_, RetrievalError>>()?;
        Ok(rank_top_k(candidates, k, Modality::Visual))
    }

    pub fn search_query(
        &self,
        query: &MultiQuery,
        k: usize,
        scope: Option<&HashSet<String>>,
    ) -> Result<Vec<ScoredHit>, RetrievalError> {
        if query.provider_id != self.provider_id {
            return Err(RetrievalError::ProviderMismatch {
                index: self.provider_id.clone(),
                query: query.provider_id.clone(),
            });
        }
        self.search(&query.vectors, k, scope)
    }
}
