//! Multimodal retrieval-augmented question answering over document
//! collections: ingestion, sparse/dense/late-interaction retrieval, textual
//! and visual RAG pipelines, consistency-checked fusion and evaluation.

pub mod benchbuild;
pub mod corpus;
pub mod eval;
pub mod fusion;
pub mod http;
pub mod ingest;
pub mod llm;
pub mod pipeline;
pub mod retrieval;
pub mod retry;
pub mod run;
pub mod session;
pub mod synth;
