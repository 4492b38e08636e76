//! Sparse, dense and late-interaction retrieval with exact full-scan search.

pub mod bm25;
pub mod dense;
pub mod hit;
pub mod multivector;
pub mod provider;

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub use bm25::{tokenize, Bm25Index, Bm25Params};
pub use dense::{normalize, DenseIndex};
pub use hit::{check_ranking, page_unit_id, Modality, ScoredHit};
pub use multivector::{maxsim_score, MultiVectorIndex, PageSource};
pub use provider::{
    Embedder, EmbeddingProvider, Handshake, HashingEmbedder, HttpEmbeddingProvider, MultiQuery,
    PageInput, ProviderError, TextQuery,
};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("query and document matrices must be non-empty")]
    EmptyMatrix,
    #[error("index built by provider `{index}` cannot serve a query embedded by `{query}`")]
    ProviderMismatch { index: String, query: String },
    #[error("unit `{0}` embedded to the zero vector")]
    ZeroVector(String),
    #[error("unexpected embedding shape: {0}")]
    WrongShape(String),
    #[error("embedding provider failed after {attempts} attempt(s): {source}")]
    Provider {
        attempts: u32,
        #[source]
        source: ProviderError,
    },
    #[error("index file {path}: {message}")]
    IndexFile { path: PathBuf, message: String },
}

pub fn save_index<T: Serialize>(path: &Path, index: &T) -> Result<(), RetrievalError> {
    let err = |message: String| RetrievalError::IndexFile {
        path: path.to_path_buf(),
        message,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| err(e.to_string()))?;
    }
    let bytes = serde_json::to_vec(index).map_err(|e| err(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| err(e.to_string()))
}

pub fn load_index<T: DeserializeOwned>(path: &Path) -> Result<T, RetrievalError> {
    let err = |message: String| RetrievalError::IndexFile {
        path: path.to_path_buf(),
        message,
    };
    let bytes = fs::read(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_slice(&bytes).map_err(|e| err(e.to_string()))
}
