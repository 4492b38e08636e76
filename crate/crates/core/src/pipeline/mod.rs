//! Unimodal RAG runners (textual, visual) and the long-context baseline.

pub mod prompt;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use prompt::{build_unimodal_prompt, ContextUnit, PromptStyle};

use crate::corpus::{AnswerType, Corpus, QaSample, Usage};
use crate::ingest::TextChunk;
use crate::llm::{estimate_tokens, parse_structured, GenSettings, LlmClient, LlmError};
use crate::retrieval::{
    Bm25Index, DenseIndex, Embedder, Modality, MultiVectorIndex, RetrievalError, ScoredHit,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextBackend {
    #[default]
    Dense,
    Bm25,
}

impl std::str::FromStr for TextBackend {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dense" => Ok(Self::Dense),
            "bm25" => Ok(Self::Bm25),
            other => Err(format!("unknown text backend `{other}` (expected dense or bm25)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub k_text: usize,
    pub k_visual: usize,
    pub style: PromptStyle,
    pub allow_refusal: bool,
    pub generation: GenSettings,
    /// Token budget of the long-context baseline's prompt.
    pub context_budget: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k_text: 7,
            k_visual: 5,
            style: PromptStyle::Full,
            allow_refusal: false,
            generation: GenSettings::default(),
            context_budget: 128_000,
        }
    }
}

pub enum TextRetriever {
    Dense { index: DenseIndex, embedder: Embedder },
    Bm25(Bm25Index),
}

impl TextRetriever {
    pub fn backend(&self) -> TextBackend {
        match self {
            TextRetriever::Dense { .. } => TextBackend::Dense,
            TextRetriever::Bm25(_) => TextBackend::Bm25,
        }
    }

    /// Top-k chunks from documents in `scope`. BM25 statistics are
    /// recomputed over the scoped units.
    pub fn search(&self, question: &str, k: usize, scope: &HashSet<String>) -> Result<Vec<ScoredHit>, RetrievalError> {
        match self {
            TextRetriever::Dense { index, embedder } => {
                let q = embedder.embed_query_text(question)?;
                index.search_query(&q, k, Some(scope))
            }
            TextRetriever::Bm25(index) => {
                if index.units.iter().all(|u| scope.contains(&u.doc_id)) {
                    index.search(question, k)
                } else {
                    index.restrict(scope).search(question, k)
                }
            }
        }
    }
}

pub struct VisualRetriever {
    pub index: MultiVectorIndex,
    pub embedder: Embedder,
}

impl VisualRetriever {
    pub fn search(&self, question: &str, k: usize, scope: &HashSet<String>) -> Result<Vec<ScoredHit>, RetrievalError> {
        let q = self.embedder.embed_query_multivector(question)?;
        self.index.search_query(&q, k, Some(scope))
    }
}

/// Everything a sample needs: the ingested corpus, its chunks, the
/// retrievers, the generation client and run settings.
pub struct Engine {
    pub corpus: Corpus,
    chunks: HashMap<String, TextChunk>,
    pub text: Option<TextRetriever>,
    pub visual: Option<VisualRetriever>,
    pub llm: LlmClient,
    pub config: PipelineConfig,
}

impl Engine {
    pub fn new(corpus: Corpus, chunks: Vec<TextChunk>, llm: LlmClient, config: PipelineConfig) -> Self {
        Self {
            corpus,
            chunks: chunks.into_iter().map(|c| (c.chunk_id.clone(), c)).collect(),
            text: None,
            visual: None,
            llm,
            config,
        }
    }

    pub fn with_text(mut self, retriever: TextRetriever) -> Self {
        self.text = Some(retriever);
        self
    }

    pub fn with_visual(mut self, retriever: VisualRetriever) -> Self {
        self.visual = Some(retriever);
        self
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&TextChunk> {
        self.chunks.get(chunk_id)
    }

    /// Text of a retrieved unit: the chunk text, or the page text for a
    /// visual hit.
    pub fn unit_text(&self, hit: &ScoredHit) -> Option<&str> {
        match hit.modality {
            Modality::Text => self.chunk(&hit.unit_id).map(|c| c.text.as_str()),
            Modality::Visual => self
                .corpus
                .page(&hit.doc_id, hit.page_no?)
                .map(|p| p.text.as_str()),
        }
    }
}

/// A question scoped to a set of documents.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub question: String,
    pub doc_ids: Vec<String>,
    pub answer_type: AnswerType,
}

impl Query {
    pub fn from_sample(sample: &QaSample) -> Self {
        Self {
            question: sample.question.clone(),
            doc_ids: sample.doc_ids.clone(),
            answer_type: sample.answer_type,
        }
    }

    pub fn scope(&self) -> HashSet<String> {
        self.doc_ids.iter().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub modality: Modality,
    /// Configured context window.
    pub k: usize,
    pub hits: Vec<ScoredHit>,
    pub evidence: String,
    pub reasoning: String,
    pub answer: String,
    pub refused: bool,
    /// Retrieval or generation failed; the output carries no answer.
    pub degraded: bool,
    /// The model skipped one or more section markers.
    #[serde(default)]
    pub parse_degraded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub usage: Usage,
}

impl PipelineOutput {
    pub fn failed(modality: Modality, k: usize, hits: Vec<ScoredHit>, error: String) -> Self {
        Self {
            modality,
            k,
            hits,
            evidence: String::new(),
            reasoning: String::new(),
            answer: String::new(),
            refused: false,
            degraded: true,
            parse_degraded: false,
            error: Some(error),
            usage: Usage::default(),
        }
    }

    pub fn is_healthy(&self) -> bool {
        !self.degraded
    }

    pub fn top_score(&self) -> Option<f64> {
        self.hits.first().map(|h| h.score)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("long-context prompt needs about {estimate} tokens, over the budget of {budget}")]
    ContextBudget { estimate: u64, budget: u64 },
    #[error("document `{0}` is not in the corpus or was not ingested")]
    MissingDocument(String),
    #[error("no {0} retriever is configured")]
    NoRetriever(&'static str),
}

fn generate_output(engine: &Engine, modality: Modality, k: usize, hits: Vec<ScoredHit>, request: crate::llm::GenRequest) -> PipelineOutput {
    match engine.llm.generate(&request) {
        Ok(generation) => {
            let parsed = parse_structured(&generation.text);
            PipelineOutput {
                modality,
                k,
                hits,
                evidence: parsed.evidence,
                reasoning: parsed.reasoning,
                answer: parsed.answer,
                refused: parsed.refused,
                degraded: false,
                parse_degraded: parsed.degraded,
                error: None,
                usage: generation.usage,
            }
        }
        Err(e) => llm_failure(modality, k, hits, e),
    }
}

fn llm_failure(modality: Modality, k: usize, hits: Vec<ScoredHit>, e: LlmError) -> PipelineOutput {
    log::warn!("{} pipeline generation failed: {e}", modality.as_str());
    PipelineOutput::failed(modality, k, hits, e.to_string())
}

/// Textual RAG: top-k chunks, inlined with provenance headers.
pub fn run_textual(engine: &Engine, query: &Query) -> PipelineOutput {
    let k = engine.config.k_text;
    let Some(retriever) = &engine.text else {
        return PipelineOutput::failed(Modality::Text, k, vec![], PipelineError::NoRetriever("text").to_string());
    };
    let hits = match retriever.search(&query.question, k, &query.scope()) {
        Ok(h) => h,
        Err(e) => return PipelineOutput::failed(Modality::Text, k, vec![], e.to_string()),
    };
    let mut units = Vec::with_capacity(hits.len());
    for hit in &hits {
        let Some(chunk) = engine.chunk(&hit.unit_id) else {
            return PipelineOutput::failed(Modality::Text, k, hits.clone(), format!("chunk `{}` is not in the chunk store", hit.unit_id));
        };
        units.push(ContextUnit {
            doc_id: chunk.doc_id.clone(),
            pages: chunk.page_span,
            text: Some(chunk.text.clone()),
            image_ref: None,
        });
    }
    let cfg = &engine.config;
    let request = build_unimodal_prompt(&query.question, &units, Modality::Text, cfg.style, cfg.allow_refusal, query.answer_type, &cfg.generation);
    generate_output(engine, Modality::Text, k, hits, request)
}

/// Hits kept on failure so the output can still report them.
pub(crate) type VisualUnits = Result<(Vec<ScoredHit>, Vec<ContextUnit>), (Vec<ScoredHit>, String)>;

/// Retrieves top-k pages and resolves their images. With `with_text`, the
/// pages' extracted text is carried along (early fusion).
pub(crate) fn visual_units(
    engine: &Engine,
    query: &Query,
    k: usize,
    with_text: bool,
) -> VisualUnits {
    let retriever = engine
        .visual
        .as_ref()
        .ok_or_else(|| (vec![], PipelineError::NoRetriever("visual").to_string()))?;
    let hits = retriever
        .search(&query.question, k, &query.scope())
        .map_err(|e| (vec![], e.to_string()))?;
    let mut units = Vec::with_capacity(hits.len());
    for hit in &hits {
        let page_no = hit.page_no.unwrap_or(0);
        let page = engine.corpus.page(&hit.doc_id, page_no);
        let Some(image_ref) = page.and_then(|p| p.image_ref.clone()) else {
            let msg = format!("page {page_no} of `{}` has no rendered image", hit.doc_id);
            return Err((hits.clone(), msg));
        };
        units.push(ContextUnit {
            doc_id: hit.doc_id.clone(),
            pages: (page_no, page_no),
            text: with_text.then(|| page.map(|p| p.text.clone()).unwrap_or_default()),
            image_ref: Some(image_ref),
        });
    }
    Ok((hits, units))
}

/// Visual RAG: top-k page images attached in rank order.
pub fn run_visual(engine: &Engine, query: &Query) -> PipelineOutput {
    let k = engine.config.k_visual;
    let (hits, units) = match visual_units(engine, query, k, false) {
        Ok(x) => x,
        Err((hits, e)) => return PipelineOutput::failed(Modality::Visual, k, hits, e),
    };
    let cfg = &engine.config;
    let request = build_unimodal_prompt(&query.question, &units, Modality::Visual, cfg.style, cfg.allow_refusal, query.answer_type, &cfg.generation);
    generate_output(engine, Modality::Visual, k, hits, request)
}

/// Long-context baseline: every page of every scoped document, no
/// retrieval. Exceeding the context budget is a hard error.
pub fn run_long_context(engine: &Engine, query: &Query) -> Result<PipelineOutput, PipelineError> {
    let mut units = Vec::new();
    for doc_id in &query.doc_ids {
        let doc = engine
            .corpus
            .document(doc_id)
            .filter(|d| d.is_ingested())
            .ok_or_else(|| PipelineError::MissingDocument(doc_id.clone()))?;
        units.extend(doc.pages.iter().map(|p| ContextUnit {
            doc_id: doc_id.clone(),
            pages: (p.page_no, p.page_no),
            text: Some(p.text.clone()),
            image_ref: None,
        }));
    }
    let cfg = &engine.config;
    let request = build_unimodal_prompt(&query.question, &units, Modality::Text, cfg.style, cfg.allow_refusal, query.answer_type, &cfg.generation);
    let estimate = estimate_tokens(request.prompt_text().chars().count());
    if estimate > cfg.context_budget {
        return Err(PipelineError::ContextBudget {
            estimate,
            budget: cfg.context_budget,
        });
    }
    Ok(generate_output(engine, Modality::Text, units.len(), vec![], request))
}
