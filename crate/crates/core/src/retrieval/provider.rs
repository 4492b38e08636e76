//! Embedding providers and the wire protocol they speak.
//!
//! ```text
//! GET  /handshake    -> {"provider_id": str, "dim": int, "multivector": bool}
//! POST /embed/text   {"kind": "text",  "items": [str]}       -> {"dim": int, "vectors": [[f32]] | [[[f32]]]}
//! POST /embed/pages  {"kind": "pages", "items": [data-uri]}  -> {"dim": int, "vectors": [[[f32]]]}
//! ```
//!
//! Page items travel as `data:image/png;base64,...` URIs. A multi-vector
//! provider answers text requests with one matrix per item (query token
//! vectors); a dense provider answers with one vector per item.

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use base64::Engine as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::bm25::tokenize;
use super::dense::normalize;
use super::RetrievalError;
use crate::http::{self, HttpError};
use crate::retry::RetryPolicy;

/// Machine-readable schema of the wire protocol, shared with external
/// provider implementations.
pub const WIRE_SCHEMA: &str = include_str!("../../schema/embedding_provider.schema.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub provider_id: String,
    pub dim: usize,
    pub multivector: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedKind {
    Text,
    Pages,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub kind: EmbedKind,
    pub items: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Vectors {
    Single(Vec<Vec<f32>>),
    Multi(Vec<Vec<Vec<f32>>>),
}

impl Vectors {
    pub fn len(&self) -> usize {
        match self {
            Vectors::Single(v) => v.len(),
            Vectors::Multi(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub dim: usize,
    pub vectors: Vectors,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl ProviderError {
    pub fn is_transient(&self) -> bool {
        matches!(self, ProviderError::Transport(_))
    }
}

impl From<HttpError> for ProviderError {
    fn from(e: HttpError) -> Self {
        match e {
            e if e.is_transient() => ProviderError::Transport(e.to_string()),
            HttpError::Decode(m) => ProviderError::Protocol(m),
            e => ProviderError::Rejected(e.to_string()),
        }
    }
}

/// A rendered page as given to a page embedder.
#[derive(Debug, Clone, PartialEq)]
pub struct PageInput {
    pub image: PathBuf,
    /// Extracted page text. Never sent over the wire; only in-process test
    /// embedders read it as a stand-in for visual content.
    pub text_hint: String,
}

pub trait EmbeddingProvider: Send + Sync {
    fn handshake(&self) -> Result<Handshake, ProviderError>;
    fn embed_texts(&self, texts: &[String]) -> Result<Vectors, ProviderError>;
    fn embed_pages(&self, pages: &[PageInput]) -> Result<Vec<Vec<Vec<f32>>>, ProviderError>;
}

/// Client for a remote provider speaking the wire protocol.
#[derive(Debug, Clone)]
pub struct HttpEmbeddingProvider {
    base_url: String,
    agent: ureq::Agent,
}

impl HttpEmbeddingProvider {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent: http::agent(timeout),
        }
    }

    fn post(&self, path: &str, request: &EmbedRequest) -> Result<EmbedResponse, ProviderError> {
        let url = format!("{}{path}", self.base_url);
        let resp: EmbedResponse = http::post_json(&self.agent, &url, &[], request)?;
        if resp.vectors.len() != request.items.len() {
            return Err(ProviderError::Protocol(format!(
                "{} items sent, {} embeddings returned",
                request.items.len(),
                resp.vectors.len()
            )));
        }
        Ok(resp)
    }
}

pub fn png_data_uri(bytes: &[u8]) -> String {
    format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(bytes)
    )
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn handshake(&self) -> Result<Handshake, ProviderError> {
        Ok(http::get_json(&self.agent, &format!("{}/handshake", self.base_url))?)
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vectors, ProviderError> {
        let request = EmbedRequest {
            kind: EmbedKind::Text,
            items: texts.to_vec(),
        };
        Ok(self.post("/embed/text", &request)?.vectors)
    }

    fn embed_pages(&self, pages: &[PageInput]) -> Result<Vec<Vec<Vec<f32>>>, ProviderError> {
        let items = pages
            .iter()
            .map(|p| {
                fs::read(&p.image)
                    .map(|b| png_data_uri(&b))
                    .map_err(|e| ProviderError::Rejected(format!("{}: {e}", p.image.display())))
            })
            .collect::<Result<_, _>>()?;
        let request = EmbedRequest {
            kind: EmbedKind::Pages,
            items,
        };
        match self.post("/embed/pages", &request)?.vectors {
            Vectors::Multi(m) => Ok(m),
            Vectors::Single(v) if v.is_empty() => Ok(Vec::new()),
            Vectors::Single(_) => Err(ProviderError::Protocol(
                "page embeddings must be one matrix per page".into(),
            )),
        }
    }
}

/// Deterministic feature-hashing embedder, used when no model server is
/// available. Every token maps to a fixed pseudo-random unit vector; a dense
/// embedding is the sum over tokens, a multi-vector embedding keeps one row
/// per token. Pages are embedded from their text hint.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    multivector: bool,
}

const EMPTY_TOKEN: &str = "\u{0}empty";

impl HashingEmbedder {
    pub fn dense(dim: usize) -> Self {
        Self {
            dim,
            multivector: false,
        }
    }

    pub fn multivector(dim: usize) -> Self {
        Self {
            dim,
            multivector: true,
        }
    }

    pub fn provider_id(&self) -> String {
        let kind = if self.multivector { "mv" } else { "dense" };
        format!("hashing-{kind}-{}", self.dim)
    }

    pub fn token_vector(&self, token: &str) -> Vec<f32> {
        let digest = Sha256::digest(token.as_bytes());
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f32> = (0..self.dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        normalize(&raw).unwrap_or(raw)
    }

    fn token_matrix(&self, text: &str) -> Vec<Vec<f32>> {
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            tokens.push(EMPTY_TOKEN.to_string());
        }
        tokens.iter().map(|t| self.token_vector(t)).collect()
    }

    fn bag(&self, text: &str) -> Vec<f32> {
        let mut acc = vec![0.0f32; self.dim];
        for row in self.token_matrix(text) {
            for (a, x) in acc.iter_mut().zip(row) {
                *a += x;
            }
        }
        acc
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn handshake(&self) -> Result<Handshake, ProviderError> {
        Ok(Handshake {
            provider_id: self.provider_id(),
            dim: self.dim,
            multivector: self.multivector,
        })
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vectors, ProviderError> {
        Ok(if self.multivector {
            Vectors::Multi(texts.iter().map(|t| self.token_matrix(t)).collect())
        } else {
            Vectors::Single(texts.iter().map(|t| self.bag(t)).collect())
        })
    }

    fn embed_pages(&self, pages: &[PageInput]) -> Result<Vec<Vec<Vec<f32>>>, ProviderError> {
        if !self.multivector {
            return Err(ProviderError::Rejected("dense provider does not embed pages".into()));
        }
        Ok(pages.iter().map(|p| self.token_matrix(&p.text_hint)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextQuery {
    pub provider_id: String,
    /// Unit length.
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiQuery {
    pub provider_id: String,
    /// Passed through unmodified from the provider.
    pub vectors: Vec<Vec<f32>>,
}

/// A provider after the handshake, with retry and shape checking.
#[derive(Clone)]
pub struct Embedder {
    provider: Arc<dyn EmbeddingProvider>,
    handshake: Handshake,
    retry: RetryPolicy,
    batch_size: usize,
}

impl std::fmt::Debug for Embedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Embedder")
            .field("handshake", &self.handshake)
            .field("retry", &self.retry)
            .finish()
    }
}

impl Embedder {
    pub fn connect(provider: Arc<dyn EmbeddingProvider>, retry: RetryPolicy) -> Result<Self, RetrievalError> {
        let handshake = call(&retry, || provider.handshake())?;
        if handshake.dim == 0 {
            return Err(RetrievalError::WrongShape("provider reports dim 0".into()));
        }
        Ok(Self {
            provider,
            handshake,
            retry,
            batch_size: 16,
        })
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn check_dim(&self, v: &[f32]) -> Result<(), RetrievalError> {
        if v.len() == self.handshake.dim {
            Ok(())
        } else {
            Err(RetrievalError::DimMismatch {
                expected: self.handshake.dim,
                actual: v.len(),
            })
        }
    }

    fn texts(&self, texts: &[String]) -> Result<Vectors, RetrievalError> {
        let out = call(&self.retry, || self.provider.embed_texts(texts))?;
        if out.len() != texts.len() {
            return Err(RetrievalError::WrongShape(format!(
                "{} texts sent, {} embeddings returned",
                texts.len(),
                out.len()
            )));
        }
        Ok(out)
    }

    /// One raw (unnormalized) vector per text, from a dense provider.
    pub fn embed_documents(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, RetrievalError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.batch_size) {
            match self.texts(batch)? {
                Vectors::Single(vs) => {
                    for v in vs {
                        self.check_dim(&v)?;
                        out.push(v);
                    }
                }
                Vectors::Multi(_) => {
                    return Err(RetrievalError::WrongShape(
                        "expected one vector per text, got matrices".into(),
                    ))
                }
            }
        }
        Ok(out)
    }

    pub fn embed_pages(&self, pages: &[PageInput]) -> Result<Vec<Vec<Vec<f32>>>, RetrievalError> {
        let mut out = Vec::with_capacity(pages.len());
        for batch in pages.chunks(self.batch_size) {
            let matrices = call(&self.retry, || self.provider.embed_pages(batch))?;
            if matrices.len() != batch.len() {
                return Err(RetrievalError::WrongShape(format!(
                    "{} pages sent, {} embeddings returned",
                    batch.len(),
                    matrices.len()
                )));
            }
            for m in matrices {
                for row in &m {
                    self.check_dim(row)?;
                }
                out.push(m);
            }
        }
        Ok(out)
    }

    pub fn embed_query_text(&self, query: &str) -> Result<TextQuery, RetrievalError> {
        let v = match self.texts(&[query.to_string()])? {
            Vectors::Single(mut vs) => vs.remove(0),
            Vectors::Multi(_) => {
                return Err(RetrievalError::WrongShape(
                    "expected a single query vector, got a matrix".into(),
                ))
            }
        };
        self.check_dim(&v)?;
        Ok(TextQuery {
            provider_id: self.handshake.provider_id.clone(),
            vector: normalize(&v).unwrap_or(v),
        })
    }

    pub fn embed_query_multivector(&self, query: &str) -> Result<MultiQuery, RetrievalError> {
        let m = match self.texts(&[query.to_string()])? {
            Vectors::Multi(mut ms) => ms.remove(0),
            Vectors::Single(_) => {
                return Err(RetrievalError::WrongShape(
                    "expected query token vectors, got a single vector".into(),
                ))
            }
        };
        if m.is_empty() {
            return Err(RetrievalError::EmptyMatrix);
        }
        for row in &m {
            self.check_dim(row)?;
        }
        Ok(MultiQuery {
            provider_id: self.handshake.provider_id.clone(),
            vectors: m,
        })
    }
}

fn call<T>(
    retry: &RetryPolicy,
    mut op: impl FnMut() -> Result<T, ProviderError>,
) -> Result<T, RetrievalError> {
    retry
        .run(|_| op(), ProviderError::is_transient)
        .map_err(|source| RetrievalError::Provider {
            attempts: retry.attempts,
            source,
        })
}
