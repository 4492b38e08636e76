mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use docrag::corpus::{AnswerType, RunMode};
use docrag::session::Backend;

use crate::config::ConfigLayer;

/// Question answering over document collections with textual, visual and
/// fused retrieval-augmented generation.
#[derive(Debug, Parser)]
#[command(name = "docrag", version)]
struct Cli {
    /// Flat TOML file with any of the global settings below.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    layer: ConfigLayer,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Text,
    Visual,
    Visdomrag,
    EarlyFusion,
    LongContext,
}

impl From<ModeArg> for RunMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Text => RunMode::TextRag,
            ModeArg::Visual => RunMode::VisualRag,
            ModeArg::Visdomrag => RunMode::Visdomrag,
            ModeArg::EarlyFusion => RunMode::EarlyFusion,
            ModeArg::LongContext => RunMode::LongContext,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Bm25,
    Dense,
    Multivector,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Bm25 => Backend::Bm25,
            BackendArg::Dense => Backend::Dense,
            BackendArg::Multivector => Backend::Multivector,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AnswerTypeArg {
    FreeText,
    ShortText,
    Binary,
}

impl From<AnswerTypeArg> for AnswerType {
    fn from(a: AnswerTypeArg) -> Self {
        match a {
            AnswerTypeArg::FreeText => AnswerType::FreeText,
            AnswerTypeArg::ShortText => AnswerType::ShortText,
            AnswerTypeArg::Binary => AnswerType::Binary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TableFormat {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract, render and chunk every document of a manifest into a store.
    Ingest {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip page rendering (text-only stores).
        #[arg(long)]
        no_render: bool,
    },
    /// Build one retrieval index over a store.
    Index {
        store: PathBuf,
        #[arg(long, value_enum)]
        backend: BackendArg,
    },
    /// Answer one question.
    Ask {
        store: PathBuf,
        #[arg(long)]
        question: String,
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Comma-separated document ids in scope; all documents by default.
        #[arg(long, value_delimiter = ',')]
        docs: Vec<String>,
        #[arg(long, value_enum, default_value = "free-text")]
        answer_type: AnswerTypeArg,
    },
    /// Run one mode over every sample of a store and write a run file.
    Run {
        store: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a run file.
    Eval {
        runs: PathBuf,
        /// Store the run was made against.
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "f1,anlcs,docid,refusal")]
        metrics: String,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        table: TableFormat,
    },
    /// Add distractor documents to every sample of a pool manifest.
    BenchBuild {
        pool: PathBuf,
        /// Average page count; the pool's mean when omitted.
        #[arg(long)]
        p_avg: Option<f64>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Drop questions whose token F1 with an earlier one reaches this.
        #[arg(long)]
        dedup_threshold: Option<f64>,
        /// Write a CSV of candidate question rewrites for review.
        #[arg(long)]
        worksheet: Option<PathBuf>,
    },
    /// Write a synthetic planted-fact collection and its manifest.
    Synth {
        dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        documents: usize,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 8)]
        pages: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
