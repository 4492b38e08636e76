//! Documents, pages, QA samples and run records, plus the line-delimited
//! manifest format they are stored in.
//!
//! A manifest holds one JSON object per line. Each object carries a `kind`
//! discriminator, either `document` or `sample`. Saving always writes the
//! documents first (sorted by `doc_id`) followed by the samples (sorted by
//! `sample_id`), so a saved corpus reloads to an identical value and
//! re-saves to identical bytes.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::normalize_binary;
use crate::fusion::FusionSummary;
use crate::llm::REFUSAL_SENTINEL;
use crate::pipeline::PipelineOutput;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub doc_id: String,
    /// 1-based.
    pub page_no: u32,
    #[serde(default)]
    pub text: String,
    /// Path of the rendered page image, relative to the store root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub source_path: String,
    pub page_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    /// Empty until the document has been ingested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pages: Vec<Page>,
}

impl Document {
    pub fn page(&self, page_no: u32) -> Option<&Page> {
        self.pages.iter().find(|p| p.page_no == page_no)
    }

    pub fn is_ingested(&self) -> bool {
        !self.pages.is_empty()
    }
}

/// Where a gold answer is supported in the source documents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceLocator {
    Page { doc_id: String, page_no: u32 },
    Snippet(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerType {
    #[default]
    FreeText,
    ShortText,
    Binary,
}

impl AnswerType {
    pub fn as_str(self) -> &'static str {
        match self {
            AnswerType::FreeText => "free_text",
            AnswerType::ShortText => "short_text",
            AnswerType::Binary => "binary",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaSample {
    pub sample_id: String,
    pub question: String,
    /// Every document in scope for the query: gold plus distractors.
    pub doc_ids: Vec<String>,
    pub gold_doc_ids: Vec<String>,
    pub gold_answer: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gold_evidence: Vec<EvidenceLocator>,
    #[serde(default)]
    pub answer_type: AnswerType,
}

impl QaSample {
    pub fn evidence_snippets(&self) -> Vec<&str> {
        self.gold_evidence
            .iter()
            .filter_map(|e| match e {
                EvidenceLocator::Snippet(s) => Some(s.as_str()),
                EvidenceLocator::Page { .. } => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ManifestRecord {
    Document(Document),
    Sample(QaSample),
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate document id `{0}`")]
    DuplicateDocument(String),
    #[error("duplicate sample id `{0}`")]
    DuplicateSample(String),
    #[error("sample `{sample_id}` references unknown document `{doc_id}`")]
    DanglingDocument { sample_id: String, doc_id: String },
    #[error("corpus failed validation:\n{0}")]
    Invalid(ValidationReport),
}

/// Immutable after load.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<Document>,
    samples: Vec<QaSample>,
}

impl Corpus {
    /// Builds a corpus from parts, sorting by id. Does not validate.
    pub fn new(mut documents: Vec<Document>, mut samples: Vec<QaSample>) -> Self {
        documents.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        Self { documents, samples }
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn samples(&self) -> &[QaSample] {
        &self.samples
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.documents
            .binary_search_by(|d| d.doc_id.as_str().cmp(doc_id))
            .ok()
            .map(|i| &self.documents[i])
    }

    pub fn sample(&self, sample_id: &str) -> Option<&QaSample> {
        self.samples
            .binary_search_by(|s| s.sample_id.as_str().cmp(sample_id))
            .ok()
            .map(|i| &self.samples[i])
    }

    pub fn page(&self, doc_id: &str, page_no: u32) -> Option<&Page> {
        self.document(doc_id).and_then(|d| d.page(page_no))
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty() && self.samples.is_empty()
    }

    pub fn into_parts(self) -> (Vec<Document>, Vec<QaSample>) {
        (self.documents, self.samples)
    }

    /// Replaces a document with the same id.
    pub fn replace_document(&mut self, document: Document) -> bool {
        match self
            .documents
            .binary_search_by(|d| d.doc_id.as_str().cmp(&document.doc_id))
        {
            Ok(i) => {
                self.documents[i] = document;
                true
            }
            Err(_) => false,
        }
    }

    pub fn to_manifest_string(&self) -> String {
        let mut out = String::new();
        for d in &self.documents {
            out.push_str(&record_line(&ManifestRecord::Document(d.clone())));
        }
        for s in &self.samples {
            out.push_str(&record_line(&ManifestRecord::Sample(s.clone())));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        write_file(path, self.to_manifest_string().as_bytes())
    }
}

fn record_line(record: &ManifestRecord) -> String {
    let mut line = serde_json::to_string(record).expect("manifest records always serialize");
    line.push('\n');
    line
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    fs::write(path, bytes).map_err(io)
}

/// Reads and validates a manifest.
pub fn load_manifest(path: &Path) -> Result<Corpus, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(BufReader::new(file), path)
}

/// Parses manifest text. `origin` is only used in error messages.
pub fn parse_manifest<R: BufRead>(reader: R, origin: &Path) -> Result<Corpus, CorpusError> {
    let mut documents = Vec::new();
    let mut samples = Vec::new();
    let mut doc_ids = HashSet::new();
    let mut sample_ids = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: origin.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                path: origin.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        match record {
            ManifestRecord::Document(d) => {
                if !doc_ids.insert(d.doc_id.clone()) {
                    return Err(CorpusError::DuplicateDocument(d.doc_id));
                }
                documents.push(d);
            }
            ManifestRecord::Sample(s) => {
                if !sample_ids.insert(s.sample_id.clone()) {
                    return Err(CorpusError::DuplicateSample(s.sample_id));
                }
                samples.push(s);
            }
        }
    }

    for s in &samples {
        for id in s.doc_ids.iter().chain(&s.gold_doc_ids) {
            if !doc_ids.contains(id) {
                return Err(CorpusError::DanglingDocument {
                    sample_id: s.sample_id.clone(),
                    doc_id: id.clone(),
                });
            }
        }
    }

    let corpus = Corpus::new(documents, samples);
    let report = validate_corpus(&corpus);
    if report.is_empty() {
        Ok(corpus)
    } else {
        Err(CorpusError::Invalid(report))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// `document:<id>`, `page:<id>#<n>` or `sample:<id>`.
    pub subject: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    fn push(&mut self, subject: String, message: impl Into<String>) {
        self.violations.push(Violation {
            subject,
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

/// Checks every type invariant. Violations are returned as data.
pub fn validate_corpus(corpus: &Corpus) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen_docs = HashSet::new();

    for d in &corpus.documents {
        let subject = format!("document:{}", d.doc_id);
        if !seen_docs.insert(d.doc_id.as_str()) {
            report.push(subject.clone(), "duplicate doc_id");
        }
        if d.doc_id.is_empty() {
            report.push(subject.clone(), "empty doc_id");
        }
        if d.page_count == 0 {
            report.push(subject.clone(), "page_count must be at least 1");
        }
        if d.is_ingested() && d.pages.len() != d.page_count as usize {
            report.push(
                subject.clone(),
                format!(
                    "page_count is {} but {} pages are present",
                    d.page_count,
                    d.pages.len()
                ),
            );
        }
        let mut seen_pages = BTreeSet::new();
        for p in &d.pages {
            let page_subject = format!("page:{}#{}", d.doc_id, p.page_no);
            if p.doc_id != d.doc_id {
                report.push(
                    page_subject.clone(),
                    format!("page belongs to `{}`", p.doc_id),
                );
            }
            if p.page_no == 0 || p.page_no > d.page_count {
                report.push(
                    page_subject.clone(),
                    format!("page_no outside 1..={}", d.page_count),
                );
            }
            if !seen_pages.insert(p.page_no) {
                report.push(page_subject, "duplicate page_no");
            }
        }
    }

    let mut seen_samples = HashSet::new();
    for s in &corpus.samples {
        let subject = format!("sample:{}", s.sample_id);
        if !seen_samples.insert(s.sample_id.as_str()) {
            report.push(subject.clone(), "duplicate sample_id");
        }
        if s.gold_doc_ids.is_empty() {
            report.push(subject.clone(), "gold_doc_ids is empty");
        }
        let in_scope: HashSet<&str> = s.doc_ids.iter().map(String::as_str).collect();
        let missing: Vec<&str> = s
            .gold_doc_ids
            .iter()
            .map(String::as_str)
            .filter(|g| !in_scope.contains(g))
            .collect();
        if !missing.is_empty() {
            report.push(
                subject.clone(),
                format!("gold documents not in doc_ids: {}", missing.join(", ")),
            );
        }
        for id in s.doc_ids.iter().chain(&s.gold_doc_ids) {
            if corpus.document(id).is_none() {
                report.push(subject.clone(), format!("unknown document `{id}`"));
            }
        }
        if s.gold_answer.trim().is_empty() {
            report.push(subject.clone(), "gold_answer is empty");
        }
        if s.answer_type == AnswerType::Binary && normalize_binary(&s.gold_answer).is_none() {
            report.push(
                subject.clone(),
                format!("binary gold answer `{}` is not yes/no", s.gold_answer),
            );
        }
        for ev in &s.gold_evidence {
            if let EvidenceLocator::Page { doc_id, page_no } = ev {
                match corpus.document(doc_id) {
                    Some(d) if *page_no >= 1 && *page_no <= d.page_count => {}
                    _ => report.push(
                        subject.clone(),
                        format!("evidence page {doc_id}#{page_no} does not exist"),
                    ),
                }
            }
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    LongContext,
    TextRag,
    VisualRag,
    Visdomrag,
    EarlyFusion,
}

impl RunMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::LongContext => "long_context",
            RunMode::TextRag => "text_rag",
            RunMode::VisualRag => "visual_rag",
            RunMode::Visdomrag => "visdomrag",
            RunMode::EarlyFusion => "early_fusion",
        }
    }
}

/// Generation accounting for one sample. Token counts are estimates
/// (characters / 4, rounded up) so that run files stay deterministic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub llm_calls: u32,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn add(&mut self, other: Usage) {
        self.llm_calls += other.llm_calls;
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub sample_id: String,
    pub mode: RunMode,
    pub final_answer: String,
    pub refused: bool,
    /// Set when a pipeline or the fusion step failed and a fallback was used.
    #[serde(default)]
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<PipelineOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual: Option<PipelineOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion: Option<FusionSummary>,
    #[serde(default)]
    pub usage: Usage,
    /// Wall-clock time; only recorded on request since it breaks
    /// byte-determinism of run files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

impl RunRecord {
    /// Returns a description of the first broken invariant, if any.
    pub fn check(&self) -> Result<(), String> {
        if self.refused && self.final_answer != REFUSAL_SENTINEL {
            return Err(format!(
                "{}: refused record must carry the refusal sentinel",
                self.sample_id
            ));
        }
        if self.mode == RunMode::Visdomrag
            && !(self.text.is_some() && self.visual.is_some())
            && !self.degraded
        {
            return Err(format!(
                "{}: fused record lacks a modality output without a degradation flag",
                self.sample_id
            ));
        }
        Ok(())
    }
}

pub fn write_run_records(path: &Path, records: &[RunRecord]) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    for r in records {
        let line = serde_json::to_string(r).expect("run records always serialize");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_run_records(path: &Path) -> Result<Vec<RunRecord>, CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(fs::File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                path: path.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}
