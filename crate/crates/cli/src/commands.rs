use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::sync::Arc;

use docrag::benchbuild::{
    build_benchmark, build_query_aug_prompt, dedup_questions, mean_pages, parse_numbered_list, write_worksheet,
    DocMetadata,
};
use docrag::corpus::{load_manifest, read_run_records, write_run_records, Corpus, RunMode};
use docrag::eval::{evaluate_run, MetricConfig, MetricSet};
use docrag::ingest::{ingest_corpus, IngestOptions, RasterRenderer, Store, TextLayerExtractor};
use docrag::llm::{ExtractiveMock, HttpChatProvider, LlmClient, LlmProvider, ReplayStore};
use docrag::pipeline::Query;
use docrag::run::{run_query, run_samples, RunOptions};
use docrag::session::{build_index, open_engine, Backend, LlmSpec, Needs};
use docrag::synth::{write_synthetic, SynthConfig};

use crate::config::{ConfigLayer, Settings};
use crate::{Cli, Command, TableFormat};

#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration.
    Usage(String),
    /// Anything that went wrong while doing the work.
    Operational(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Operational(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Operational(m) => f.write_str(m),
        }
    }
}

fn op(e: impl fmt::Display) -> Failure {
    Failure::Operational(e.to_string())
}

fn usage(e: impl fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn needs(mode: RunMode) -> Needs {
    match mode {
        RunMode::TextRag => Needs { text: true, visual: false },
        RunMode::VisualRag | RunMode::EarlyFusion => Needs { text: false, visual: true },
        RunMode::Visdomrag => Needs { text: true, visual: true },
        RunMode::LongContext => Needs { text: false, visual: false },
    }
}

fn write_or_print(out: Option<&Path>, body: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, body).map_err(|e| op(format!("cannot write {}: {e}", path.display()))),
        None => emit(body),
    }
}

fn emit_line(line: &str) -> Result<(), Failure> {
    emit(&format!("{line}\n"))
}

/// Writes data to standard output; a closed pipe is not an error.
fn emit(body: &str) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    match out.write_all(body.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(op(e)),
        _ => Ok(()),
    }
}

pub fn dispatch(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(path) => ConfigLayer::load(path).map_err(usage)?,
        None => ConfigLayer::default(),
    };
    let settings = Settings::resolve(&cli.layer.over(file)).map_err(usage)?;
    match cli.command {
        Command::Ingest { manifest, out, no_render } => {
            let store = Store::new(out);
            let options = IngestOptions {
                chunker: settings.chunker,
                render: !no_render,
            };
            let report =
                ingest_corpus(&manifest, &store, &TextLayerExtractor, &RasterRenderer::default(), &options).map_err(op)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            emit_line(&format!("ingested {} documents, {} pages, {} chunks", report.documents, report.pages, report.chunks))?;
            Ok(())
        }
        Command::Index { store, backend } => {
            let store = Store::new(store);
            let backend = Backend::from(backend);
            let s = &settings.session;
            let embedder = match backend {
                Backend::Bm25 => None,
                Backend::Dense => Some(s.text_embedder.connect(s.timeout, s.retry).map_err(op)?),
                Backend::Multivector => Some(s.page_embedder.connect(s.timeout, s.retry).map_err(op)?),
            };
            let units = build_index(&store, backend, embedder.as_ref()).map_err(op)?;
            emit_line(&format!("indexed {units} units into {}", store.index_path(backend.name()).display()))?;
            Ok(())
        }
        Command::Ask {
            store,
            question,
            mode,
            docs,
            answer_type,
        } => {
            let store = Store::new(store);
            let mode = RunMode::from(mode);
            let engine = open_engine(&store, &settings.session, needs(mode)).map_err(op)?;
            let doc_ids = if docs.is_empty() {
                engine.corpus.documents().iter().map(|d| d.doc_id.clone()).collect()
            } else {
                for d in &docs {
                    if engine.corpus.document(d).is_none() {
                        return Err(usage(format!("unknown document `{d}`")));
                    }
                }
                docs
            };
            let query = Query {
                question,
                doc_ids,
                answer_type: answer_type.into(),
            };
            let record = run_query(&engine, "ask", &query, mode);
            emit_line(&serde_json::to_string_pretty(&record).map_err(op)?)?;
            match record.error {
                Some(e) if record.final_answer.is_empty() && !record.refused => Err(op(e)),
                _ => Ok(()),
            }
        }
        Command::Run { store, mode, out } => {
            let store = Store::new(store);
            let mode = RunMode::from(mode);
            let engine = open_engine(&store, &settings.session, needs(mode)).map_err(op)?;
            let options = RunOptions {
                workers: settings.workers,
                remove_oracle: settings.remove_oracle,
                record_timing: false,
            };
            let records = run_samples(&engine, engine.corpus.samples(), mode, &options).map_err(op)?;
            write_run_records(&out, &records).map_err(op)?;
            let failed = records.iter().filter(|r| r.error.is_some()).count();
            eprintln!(
                "{} samples, {} with errors, {} generation calls ({} reached the provider)",
                records.len(),
                failed,
                engine.llm.generate_calls(),
                engine.llm.provider_calls()
            );
            Ok(())
        }
        Command::Eval {
            runs,
            store,
            metrics,
            out,
            table,
        } => {
            let metrics: MetricSet = metrics.parse().map_err(usage)?;
            let store = Store::new(store);
            let records = read_run_records(&runs).map_err(op)?;
            let corpus = store.load_corpus().map_err(op)?;
            let chunks = store.load_chunks().map_err(op)?;
            let config = MetricConfig {
                metrics,
                ..MetricConfig::default()
            };
            let report = evaluate_run(&records, &corpus, &chunks, &config).map_err(op)?;
            let body = match table {
                TableFormat::Json => report.to_json() + "\n",
                TableFormat::Csv => report.to_csv().map_err(op)?,
            };
            write_or_print(out.as_deref(), &body)
        }
        Command::BenchBuild {
            pool,
            p_avg,
            seed,
            out,
            dedup_threshold,
            worksheet,
        } => {
            let corpus = load_manifest(&pool).map_err(op)?;
            let p_avg = p_avg.unwrap_or_else(|| mean_pages(corpus.documents()));
            let built = build_benchmark(&corpus, p_avg, seed).map_err(op)?;
            let built = match dedup_threshold {
                Some(t) => {
                    let (kept, dropped) = dedup_questions(built.samples(), t);
                    if !dropped.is_empty() {
                        eprintln!("dropped near-duplicate questions: {}", dropped.join(", "));
                    }
                    Corpus::new(built.documents().to_vec(), kept)
                }
                None => built,
            };
            built.save(&out).map_err(op)?;
            if let Some(path) = worksheet {
                let body = rewrite_worksheet(&built, &settings, pool.parent().unwrap_or(Path::new(".")))?;
                write_or_print(Some(&path), &body)?;
            }
            emit_line(&format!("wrote {} samples to {}", built.samples().len(), out.display()))?;
            Ok(())
        }
        Command::Synth {
            dir,
            documents,
            samples,
            pages,
            seed,
        } => {
            if samples > documents || pages == 0 {
                return Err(usage("need samples <= documents and at least one page"));
            }
            let cfg = SynthConfig {
                documents,
                samples,
                pages_per_document: pages,
                seed,
                ..SynthConfig::default()
            };
            let s = write_synthetic(&dir, &cfg).map_err(op)?;
            emit_line(&format!("wrote {}", s.manifest.display()))?;
            Ok(())
        }
    }
}

/// Asks the model for rewrites of every question, one worksheet row per
/// candidate.
fn rewrite_worksheet(corpus: &Corpus, settings: &Settings, image_root: &Path) -> Result<String, Failure> {
    let s = &settings.session;
    let provider: Arc<dyn LlmProvider> = match &s.llm {
        LlmSpec::Mock => Arc::new(ExtractiveMock::new()),
        LlmSpec::Http { base_url, api_key } => Arc::new(HttpChatProvider::new(base_url, api_key.clone(), s.timeout)),
    };
    let mut llm = LlmClient::new(provider, image_root).with_retry(s.retry);
    if let Some((dir, mode)) = &s.replay {
        llm = llm.with_store(ReplayStore::open(dir).map_err(op)?, *mode);
    }
    let mut rows = Vec::new();
    for sample in corpus.samples() {
        let Some(doc) = sample.gold_doc_ids.first().and_then(|d| corpus.document(d)) else {
            continue;
        };
        let meta = DocMetadata {
            doc_id: doc.doc_id.clone(),
            title: doc.title.clone(),
            caption: None,
        };
        let request = match build_query_aug_prompt(&sample.question, &sample.gold_answer, &meta, &s.pipeline.generation) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("warning: {}: {e}", sample.sample_id);
                continue;
            }
        };
        let reply = llm.generate(&request).map_err(op)?;
        rows.push((sample.sample_id.clone(), sample.question.clone(), parse_numbered_list(&reply.text)));
    }
    write_worksheet(&rows).map_err(op)
}
