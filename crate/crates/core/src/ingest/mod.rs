//! Turns source documents into the two retrieval substrates: text chunks
//! with page provenance, and rendered page images.

pub mod chunk;
pub mod extract;
pub mod render;
pub mod source;

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use thiserror::Error;

pub use chunk::{chunk_text, ChunkerConfig, DocumentText, TextChunk};
pub use extract::{extract_text, CommandExtractor, TextExtractor, TextLayerExtractor};
pub use render::{PageRenderer, RasterRenderer, RenderError, RenderedImage};
pub use source::{SourceDocument, SourcePage};

use crate::corpus::{load_manifest, Corpus, CorpusError, Document};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("source file {0} is empty")]
    EmptySource(PathBuf),
    #[error("unsupported source {path}: {reason}")]
    Unsupported { path: PathBuf, reason: String },
    #[error("rendering `{doc_id}` failed: {source}")]
    Render {
        doc_id: String,
        #[source]
        source: RenderError,
    },
    #[error(transparent)]
    Chunk(#[from] chunk::ChunkError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("malformed chunk record at {path}:{line}: {message}")]
    MalformedChunk {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// On-disk layout of an ingested collection.
///
/// ```text
/// <root>/corpus.jsonl          manifest with pages (text + image_ref)
/// <root>/chunks.jsonl          one TextChunk per line
/// <root>/pages/<doc>/0001.png  rendered pages
/// <root>/index/<name>.json     retrieval indices
/// ```
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.root.join("corpus.jsonl")
    }

    pub fn chunks_path(&self) -> PathBuf {
        self.root.join("chunks.jsonl")
    }

    pub fn index_path(&self, name: &str) -> PathBuf {
        self.root.join("index").join(format!("{name}.json"))
    }

    /// Store-relative location of a page image.
    pub fn page_image_ref(doc_id: &str, page_no: u32) -> String {
        format!("pages/{}/{:04}.png", path_component(doc_id), page_no)
    }

    pub fn resolve(&self, image_ref: &str) -> PathBuf {
        self.root.join(image_ref)
    }

    pub fn load_corpus(&self) -> Result<Corpus, IngestError> {
        Ok(load_manifest(&self.corpus_path())?)
    }

    pub fn load_chunks(&self) -> Result<Vec<TextChunk>, IngestError> {
        read_chunks(&self.chunks_path())
    }
}

/// Escapes a doc id into a single safe path component.
fn path_component(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for (i, b) in id.bytes().enumerate() {
        let safe = b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || (b == b'.' && i > 0);
        if safe {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    if out.is_empty() {
        out.push('%');
    }
    out
}

pub fn write_chunks(path: &Path, chunks: &[TextChunk]) -> Result<(), IngestError> {
    let io = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    for c in chunks {
        let line = serde_json::to_string(c).expect("chunks always serialize");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_chunks(path: &Path) -> Result<Vec<TextChunk>, IngestError> {
    let io = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(fs::File::open(path).map_err(io)?);
    let mut chunks = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        chunks.push(
            serde_json::from_str(&line).map_err(|e| IngestError::MalformedChunk {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(chunks)
}

/// Renders every page into the store. Any page failure is fatal since the
/// visual pipeline cannot work around a missing page.
pub fn render_pages(
    document: &SourceDocument,
    renderer: &dyn PageRenderer,
    store: &Store,
) -> Result<Vec<(u32, String, RenderedImage)>, IngestError> {
    document
        .pages
        .iter()
        .map(|page| {
            let image_ref = Store::page_image_ref(&document.doc_id, page.page_no);
            let dims = renderer
                .render(page, &store.resolve(&image_ref))
                .map_err(|source| IngestError::Render {
                    doc_id: document.doc_id.clone(),
                    source,
                })?;
            Ok((page.page_no, image_ref, dims))
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct IngestOptions {
    pub chunker: ChunkerConfig,
    /// Skip page rendering for text-only collections.
    pub render: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            chunker: ChunkerConfig::default(),
            render: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestedDocument {
    pub document: Document,
    pub chunks: Vec<TextChunk>,
    pub warnings: Vec<String>,
}

/// Ingests one document. `base_dir` anchors relative source paths.
pub fn ingest_document(
    document: &Document,
    base_dir: &Path,
    extractor: &dyn TextExtractor,
    renderer: &dyn PageRenderer,
    store: &Store,
    options: &IngestOptions,
) -> Result<IngestedDocument, IngestError> {
    let source_path = base_dir.join(&document.source_path);
    let mut source = SourceDocument::open(&document.doc_id, &source_path)?;
    let mut warnings = Vec::new();
    if source.pages.len() != document.page_count as usize {
        let msg = format!(
            "{}: manifest declares {} pages, source has {}",
            document.doc_id,
            document.page_count,
            source.pages.len()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let rendered = if options.render {
        let rendered = render_pages(&source, renderer, store)?;
        for (page, (_, image_ref, _)) in source.pages.iter_mut().zip(&rendered) {
            if page.image.is_none() {
                page.image = Some(store.resolve(image_ref));
            }
        }
        Some(rendered)
    } else {
        None
    };

    let (mut pages, extract_warnings) = extract_text(&source, extractor);
    warnings.extend(extract_warnings);
    if let Some(rendered) = rendered {
        for (page, (_, image_ref, _)) in pages.iter_mut().zip(rendered) {
            page.image_ref = Some(image_ref);
        }
    }

    let text = DocumentText::from_pages(&document.doc_id, &pages);
    let chunks = chunk_text(&text, &options.chunker)?;
    let mut out = document.clone();
    out.page_count = pages.len() as u32;
    out.pages = pages;
    Ok(IngestedDocument {
        document: out,
        chunks,
        warnings,
    })
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub documents: usize,
    pub pages: usize,
    pub chunks: usize,
    pub warnings: Vec<String>,
}

struct ExclusiveExtractor<'a> {
    inner: &'a dyn TextExtractor,
    lock: Mutex<()>,
}

impl TextExtractor for ExclusiveExtractor<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn extract(&self, page: &SourcePage) -> Result<String, extract::ExtractError> {
        let _guard = self.lock.lock().unwrap_or_else(|p| p.into_inner());
        self.inner.extract(page)
    }
}

struct ExclusiveRenderer<'a> {
    inner: &'a dyn PageRenderer,
    lock: Mutex<()>,
}

impl PageRenderer for ExclusiveRenderer<'_> {
    fn dpi(&self) -> u32 {
        self.inner.dpi()
    }
    fn render(&self, page: &SourcePage, out: &Path) -> Result<RenderedImage, RenderError> {
        let _guard = self.lock.lock().unwrap_or_else(|p| p.into_inner());
        self.inner.render(page, out)
    }
}

/// Ingests every document of a manifest into `store`, in parallel across
/// documents, and writes the store's corpus and chunk files.
pub fn ingest_corpus(
    manifest: &Path,
    store: &Store,
    extractor: &dyn TextExtractor,
    renderer: &dyn PageRenderer,
    options: &IngestOptions,
) -> Result<IngestReport, IngestError> {
    let corpus = load_manifest(manifest)?;
    let base_dir = manifest.parent().unwrap_or(Path::new("."));

    let exclusive_extractor;
    let extractor: &dyn TextExtractor = if extractor.supports_concurrency() {
        extractor
    } else {
        exclusive_extractor = ExclusiveExtractor {
            inner: extractor,
            lock: Mutex::new(()),
        };
        &exclusive_extractor
    };
    let exclusive_renderer;
    let renderer: &dyn PageRenderer = if renderer.supports_concurrency() {
        renderer
    } else {
        exclusive_renderer = ExclusiveRenderer {
            inner: renderer,
            lock: Mutex::new(()),
        };
        &exclusive_renderer
    };

    let ingested: Vec<IngestedDocument> = corpus
        .documents()
        .par_iter()
        .map(|d| ingest_document(d, base_dir, extractor, renderer, store, options))
        .collect::<Result<_, _>>()?;

    let mut report = IngestReport::default();
    let mut documents = Vec::with_capacity(ingested.len());
    let mut chunks = Vec::new();
    for doc in ingested {
        report.documents += 1;
        report.pages += doc.document.pages.len();
        report.chunks += doc.chunks.len();
        report.warnings.extend(doc.warnings);
        documents.push(doc.document);
        chunks.extend(doc.chunks);
    }
    let (_, samples) = corpus.into_parts();
    let ingested_corpus = Corpus::new(documents, samples);
    fs::create_dir_all(store.root()).map_err(|source| IngestError::Io {
        path: store.root().to_path_buf(),
        source,
    })?;
    ingested_corpus.save(&store.corpus_path())?;
    write_chunks(&store.chunks_path(), &chunks)?;
    Ok(report)
}
