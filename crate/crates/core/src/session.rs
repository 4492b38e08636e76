//! Wiring an ingested store into a ready engine: provider specs, index
//! building and loading.

use std::fs;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::ingest::{IngestError, Store};
use crate::llm::{CacheMode, ExtractiveMock, HttpChatProvider, LlmClient, LlmProvider, ReplayStore};
use crate::pipeline::{Engine, PipelineConfig, TextBackend, TextRetriever, VisualRetriever};
use crate::retrieval::{
    load_index, save_index, Bm25Index, Bm25Params, DenseIndex, Embedder, EmbeddingProvider, HashingEmbedder,
    HttpEmbeddingProvider, MultiVectorIndex, PageInput, PageSource, RetrievalError,
};
use crate::retry::RetryPolicy;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("bad provider spec `{0}` (expected hashing:<dim>, hashing-mv:<dim>, or an http(s) URL)")]
    BadSpec(String),
    #[error(transparent)]
    Store(#[from] IngestError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("index {0} is missing; build it with `index --backend {1}`")]
    MissingIndex(String, &'static str),
    #[error("cannot open replay store: {0}")]
    Replay(std::io::Error),
    #[error("cannot read page image {path}: {source}")]
    PageImage {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Bm25,
    Dense,
    Multivector,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Bm25 => "bm25",
            Backend::Dense => "dense",
            Backend::Multivector => "multivector",
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bm25" => Ok(Self::Bm25),
            "dense" => Ok(Self::Dense),
            "multivector" => Ok(Self::Multivector),
            other => Err(format!("unknown backend `{other}` (expected bm25, dense or multivector)")),
        }
    }
}

/// Where embeddings come from: `hashing:<dim>` (dense), `hashing-mv:<dim>`
/// (multi-vector) or the base URL of a wire-protocol service.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmbedderSpec {
    Hashing { dim: usize, multivector: bool },
    Http(String),
}

impl std::str::FromStr for EmbedderSpec {
    type Err = SessionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SessionError::BadSpec(s.to_string());
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(Self::Http(s.to_string()));
        }
        let (kind, dim) = s.split_once(':').ok_or_else(bad)?;
        let dim: usize = dim.parse().map_err(|_| bad())?;
        if dim == 0 {
            return Err(bad());
        }
        match kind {
            "hashing" => Ok(Self::Hashing { dim, multivector: false }),
            "hashing-mv" => Ok(Self::Hashing { dim, multivector: true }),
            _ => Err(bad()),
        }
    }
}

impl EmbedderSpec {
    pub fn connect(&self, timeout: Duration, retry: RetryPolicy) -> Result<Embedder, RetrievalError> {
        let provider: Arc<dyn EmbeddingProvider> = match self {
            EmbedderSpec::Hashing { dim, multivector: false } => Arc::new(HashingEmbedder::dense(*dim)),
            EmbedderSpec::Hashing { dim, multivector: true } => Arc::new(HashingEmbedder::multivector(*dim)),
            EmbedderSpec::Http(url) => Arc::new(HttpEmbeddingProvider::new(url, timeout)),
        };
        Embedder::connect(provider, retry)
    }
}

/// Builds one index over the whole store and writes it to
/// `index/<backend>.json`. Returns the number of indexed units.
pub fn build_index(store: &Store, backend: Backend, embedder: Option<&Embedder>) -> Result<usize, SessionError> {
    let path = store.index_path(backend.name());
    let need = || SessionError::BadSpec(format!("{} backend needs an embedder", backend.name()));
    match backend {
        Backend::Bm25 => {
            let index = Bm25Index::build(&store.load_chunks()?, Bm25Params::default())?;
            save_index(&path, &index)?;
            Ok(index.unit_count())
        }
        Backend::Dense => {
            let index = DenseIndex::build(&store.load_chunks()?, embedder.ok_or_else(need)?)?;
            save_index(&path, &index)?;
            Ok(index.units.len())
        }
        Backend::Multivector => {
            let corpus = store.load_corpus()?;
            let pages: Vec<PageSource> = corpus
                .documents()
                .iter()
                .flat_map(|d| d.pages.iter())
                .map(|p| PageSource {
                    doc_id: p.doc_id.clone(),
                    page_no: p.page_no,
                    input: PageInput {
                        image: p
                            .image_ref
                            .as_deref()
                            .map(|r| store.resolve(r))
                            .unwrap_or_default(),
                        text_hint: p.text.clone(),
                    },
                })
                .collect();
            let index = MultiVectorIndex::build(&pages, embedder.ok_or_else(need)?)?;
            save_index(&path, &index)?;
            Ok(index.pages.len())
        }
    }
}

fn load_existing<T: serde::de::DeserializeOwned>(store: &Store, backend: Backend) -> Result<T, SessionError> {
    let path = store.index_path(backend.name());
    if !path.exists() {
        return Err(SessionError::MissingIndex(path.display().to_string(), backend.name()));
    }
    Ok(load_index(&path)?)
}

pub fn load_text_retriever(store: &Store, backend: TextBackend, embedder: Option<Embedder>) -> Result<TextRetriever, SessionError> {
    match backend {
        TextBackend::Bm25 => Ok(TextRetriever::Bm25(load_existing(store, Backend::Bm25)?)),
        TextBackend::Dense => Ok(TextRetriever::Dense {
            index: load_existing(store, Backend::Dense)?,
            embedder: embedder.ok_or_else(|| SessionError::BadSpec("dense retrieval needs an embedder".into()))?,
        }),
    }
}

pub fn load_visual_retriever(store: &Store, embedder: Embedder) -> Result<VisualRetriever, SessionError> {
    Ok(VisualRetriever {
        index: load_existing(store, Backend::Multivector)?,
        embedder,
    })
}

/// The offline mock model, able to "see" every rendered page of the store.
pub fn mock_for_store(store: &Store) -> Result<ExtractiveMock, SessionError> {
    let corpus = store.load_corpus()?;
    let mut mock = ExtractiveMock::new();
    for page in corpus.documents().iter().flat_map(|d| d.pages.iter()) {
        if let Some(r) = &page.image_ref {
            let path = store.resolve(r);
            let bytes = fs::read(&path).map_err(|source| SessionError::PageImage {
                path: path.display().to_string(),
                source,
            })?;
            mock = mock.with_page_text(&bytes, &page.text);
        }
    }
    Ok(mock)
}

/// `mock` or the base URL of an OpenAI-compatible endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LlmSpec {
    Mock,
    Http { base_url: String, api_key: Option<String> },
}

impl LlmSpec {
    pub fn provider(&self, store: &Store, timeout: Duration) -> Result<Arc<dyn LlmProvider>, SessionError> {
        Ok(match self {
            LlmSpec::Mock => Arc::new(mock_for_store(store)?),
            LlmSpec::Http { base_url, api_key } => Arc::new(HttpChatProvider::new(base_url, api_key.clone(), timeout)),
        })
    }
}

#[derive(Debug, Clone)]
pub struct SessionOptions {
    pub pipeline: PipelineConfig,
    pub text_backend: TextBackend,
    pub text_embedder: EmbedderSpec,
    pub page_embedder: EmbedderSpec,
    pub llm: LlmSpec,
    pub replay: Option<(std::path::PathBuf, CacheMode)>,
    pub max_in_flight: usize,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            text_backend: TextBackend::Dense,
            text_embedder: EmbedderSpec::Hashing { dim: 512, multivector: false },
            page_embedder: EmbedderSpec::Hashing { dim: 64, multivector: true },
            llm: LlmSpec::Mock,
            replay: None,
            max_in_flight: 8,
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        }
    }
}

/// Which retrievers an engine must carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Needs {
    pub text: bool,
    pub visual: bool,
}

/// Opens an engine over `store` with the given LLM provider.
pub fn open_engine_with(store: &Store, opts: &SessionOptions, needs: Needs, provider: Arc<dyn LlmProvider>) -> Result<Engine, SessionError> {
    let corpus = store.load_corpus()?;
    let chunks = store.load_chunks()?;
    let mut llm = LlmClient::new(provider, store.root())
        .with_retry(opts.retry)
        .with_max_in_flight(opts.max_in_flight);
    if let Some((dir, mode)) = &opts.replay {
        llm = llm.with_store(ReplayStore::open(dir).map_err(SessionError::Replay)?, *mode);
    }
    let mut engine = Engine::new(corpus, chunks, llm, opts.pipeline.clone());
    if needs.text {
        let embedder = match opts.text_backend {
            TextBackend::Dense => Some(opts.text_embedder.connect(opts.timeout, opts.retry)?),
            TextBackend::Bm25 => None,
        };
        engine = engine.with_text(load_text_retriever(store, opts.text_backend, embedder)?);
    }
    if needs.visual {
        let embedder = opts.page_embedder.connect(opts.timeout, opts.retry)?;
        engine = engine.with_visual(load_visual_retriever(store, embedder)?);
    }
    Ok(engine)
}

pub fn open_engine(store: &Store, opts: &SessionOptions, needs: Needs) -> Result<Engine, SessionError> {
    let provider = opts.llm.provider(store, opts.timeout)?;
    open_engine_with(store, opts, needs, provider)
}
