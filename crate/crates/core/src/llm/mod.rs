//! Provider-agnostic generation with image attachments, retry, a bound on
//! in-flight calls and a record/replay cache.

pub mod cache;
pub mod mock;
pub mod parse;
pub mod provider;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{cache_key, ReplayStore};
pub use mock::ExtractiveMock;
pub use parse::{
    is_refusal, parse_sections, parse_structured, StructuredResponse, ANSWER_MARKER,
    CONSISTENCY_MARKER, EVIDENCE_MARKER, REASONING_MARKER, REFUSAL_SENTINEL,
};
pub use provider::{HttpChatProvider, ScriptedProvider};

use crate::corpus::Usage;
use crate::retry::RetryPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            text: text.into(),
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
        }
    }
}

/// Model, sampling and length settings shared by every prompt a run issues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSettings {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenSettings {
    fn default() -> Self {
        Self {
            model_id: "default".into(),
            temperature: 0.5,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    /// Store-relative page image refs, attached in order.
    #[serde(default)]
    pub images: Vec<String>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl GenRequest {
    pub fn new(model_id: impl Into<String>, messages: Vec<Message>) -> Self {
        let defaults = GenSettings::default();
        Self {
            model_id: model_id.into(),
            messages,
            images: Vec::new(),
            temperature: defaults.temperature,
            max_tokens: defaults.max_tokens,
        }
    }

    pub fn with_settings(messages: Vec<Message>, images: Vec<String>, settings: &GenSettings) -> Self {
        Self {
            model_id: settings.model_id.clone(),
            messages,
            images,
            temperature: settings.temperature,
            max_tokens: settings.max_tokens,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("at least one message is required".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} must be a non-negative number",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// All message texts joined by blank lines.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

/// A resolved image attachment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageData {
    pub image_ref: String,
    pub bytes: Arc<Vec<u8>>,
    pub sha256: String,
}

impl ImageData {
    pub fn from_bytes(image_ref: &str, bytes: Vec<u8>) -> Self {
        Self {
            image_ref: image_ref.to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            bytes: Arc::new(bytes),
        }
    }
}

/// Failure reported by a provider adapter.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GenError {
    /// Worth retrying.
    #[error("transport failure: {0}")]
    Transport(String),
    /// The provider refused or could not process the content.
    #[error("provider rejected the request: {0}")]
    Content(String),
}

pub trait LlmProvider: Send + Sync {
    fn complete(&self, request: &GenRequest, images: &[ImageData]) -> Result<String, GenError>;
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("image `{image_ref}` cannot be read: {source}")]
    Image {
        image_ref: String,
        #[source]
        source: std::io::Error,
    },
    #[error("generation failed after {attempts} attempt(s): {source}")]
    Transport { attempts: u32, source: GenError },
    #[error("{0}")]
    Content(GenError),
    #[error("no recorded response for request {0} and replay-only mode is set")]
    ReplayMiss(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// Never touch the store.
    Off,
    /// Serve hits, record misses.
    #[default]
    Record,
    /// Serve hits; a miss is an error and the provider is never called.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub text: String,
    pub cached: bool,
    pub usage: Usage,
}

pub fn estimate_tokens(chars: usize) -> u64 {
    chars.div_ceil(4) as u64
}

/// Counting semaphore bounding concurrent provider calls.
#[derive(Debug)]
struct Limiter {
    available: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut n = self.available.lock().unwrap_or_else(|p| p.into_inner());
        while *n == 0 {
            n = self.cv.wait(n).unwrap_or_else(|p| p.into_inner());
        }
        *n -= 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Safe to share across threads.
pub struct LlmClient {
    provider: Arc<dyn LlmProvider>,
    image_root: PathBuf,
    store: Option<ReplayStore>,
    mode: CacheMode,
    retry: RetryPolicy,
    limiter: Limiter,
    generate_calls: AtomicU64,
    provider_calls: AtomicU64,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("image_root", &self.image_root)
            .field("store", &self.store)
            .field("mode", &self.mode)
            .finish()
    }
}

impl LlmClient {
    pub fn new(provider: Arc<dyn LlmProvider>, image_root: impl Into<PathBuf>) -> Self {
        Self {
            provider,
            image_root: image_root.into(),
            store: None,
            mode: CacheMode::Off,
            retry: RetryPolicy::default(),
            limiter: Limiter::new(8),
            generate_calls: AtomicU64::new(0),
            provider_calls: AtomicU64::new(0),
        }
    }

    pub fn with_store(mut self, store: ReplayStore, mode: CacheMode) -> Self {
        self.store = Some(store);
        self.mode = mode;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.limiter = Limiter::new(n);
        self
    }

    pub fn image_root(&self) -> &Path {
        &self.image_root
    }

    /// Generation requests served, including cache hits.
    pub fn generate_calls(&self) -> u64 {
        self.generate_calls.load(Ordering::SeqCst)
    }

    /// Requests that reached the provider (each retry counts).
    pub fn provider_calls(&self) -> u64 {
        self.provider_calls.load(Ordering::SeqCst)
    }

    fn load_images(&self, request: &GenRequest) -> Result<Vec<ImageData>, LlmError> {
        request
            .images
            .iter()
            .map(|r| {
                fs::read(self.image_root.join(r))
                    .map(|b| ImageData::from_bytes(r, b))
                    .map_err(|source| LlmError::Image {
                        image_ref: r.clone(),
                        source,
                    })
            })
            .collect()
    }

    pub fn generate(&self, request: &GenRequest) -> Result<Generation, LlmError> {
        request.validate()?;
        let images = self.load_images(request)?;
        self.generate_calls.fetch_add(1, Ordering::SeqCst);
        let usage = |text: &str| Usage {
            llm_calls: 1,
            prompt_tokens: estimate_tokens(request.prompt_text().chars().count()),
            completion_tokens: estimate_tokens(text.chars().count()),
        };

        let store = self.store.as_ref().filter(|_| self.mode != CacheMode::Off);
        let key = store.map(|_| cache_key(request, &images));
        if let (Some(store), Some(key)) = (store, &key) {
            if let Some(text) = store.get(key) {
                return Ok(Generation {
                    usage: usage(&text),
                    text,
                    cached: true,
                });
            }
            if self.mode == CacheMode::Replay {
                return Err(LlmError::ReplayMiss(key.clone()));
            }
        }

        let text = self
            .retry
            .run(
                |_| {
                    let _permit = self.limiter.acquire();
                    self.provider_calls.fetch_add(1, Ordering::SeqCst);
                    self.provider.complete(request, &images)
                },
                |e| matches!(e, GenError::Transport(_)),
            )
            .map_err(|e| match e {
                GenError::Transport(_) => LlmError::Transport {
                    attempts: self.retry.attempts,
                    source: e,
                },
                GenError::Content(_) => LlmError::Content(e),
            })?;

        if let (Some(store), Some(key)) = (store, &key) {
            if let Err(e) = store.put(key, &request.model_id, &text) {
                log::warn!("could not record generation {key}: {e}");
            }
        }
        Ok(Generation {
            usage: usage(&text),
            text,
            cached: false,
        })
    }
}
