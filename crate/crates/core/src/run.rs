//! Batch execution of one mode over many samples.

use std::time::Instant;

use rayon::prelude::*;

use crate::corpus::{QaSample, RunMode, RunRecord, Usage};
use crate::eval::remove_oracle;
use crate::fusion::{run_early_fusion, run_visdomrag};
use crate::llm::REFUSAL_SENTINEL;
use crate::pipeline::{run_long_context, run_textual, run_visual, Engine, PipelineOutput, Query};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub workers: usize,
    /// Drop gold documents from each sample's retrieval set.
    pub remove_oracle: bool,
    /// Store wall-clock time on each record (makes run files differ).
    pub record_timing: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 4,
            remove_oracle: false,
            record_timing: false,
        }
    }
}

fn error_record(sample_id: &str, mode: RunMode, error: String) -> RunRecord {
    RunRecord {
        sample_id: sample_id.to_string(),
        mode,
        final_answer: String::new(),
        refused: false,
        degraded: true,
        error: Some(error),
        text: None,
        visual: None,
        fusion: None,
        usage: Usage::default(),
        elapsed_ms: None,
    }
}

fn unimodal_record(sample_id: &str, mode: RunMode, out: PipelineOutput) -> RunRecord {
    let (text, visual) = match mode {
        RunMode::VisualRag => (None, Some(out.clone())),
        _ => (Some(out.clone()), None),
    };
    RunRecord {
        sample_id: sample_id.to_string(),
        mode,
        final_answer: if out.refused { REFUSAL_SENTINEL.to_string() } else { out.answer.clone() },
        refused: out.refused,
        degraded: out.degraded,
        error: out.error.clone(),
        text,
        visual,
        fusion: None,
        usage: out.usage,
        elapsed_ms: None,
    }
}

/// Runs one sample; failures become records with `error` set.
pub fn run_query(engine: &Engine, sample_id: &str, query: &Query, mode: RunMode) -> RunRecord {
    match mode {
        RunMode::TextRag => unimodal_record(sample_id, mode, run_textual(engine, query)),
        RunMode::VisualRag => unimodal_record(sample_id, mode, run_visual(engine, query)),
        RunMode::LongContext => match run_long_context(engine, query) {
            Ok(out) => unimodal_record(sample_id, mode, out),
            Err(e) => error_record(sample_id, mode, e.to_string()),
        },
        RunMode::EarlyFusion => run_early_fusion(engine, query).into_record(sample_id, mode),
        RunMode::Visdomrag => match run_visdomrag(engine, query) {
            Ok(r) => r.into_record(sample_id, mode),
            Err(e) => error_record(sample_id, mode, e.to_string()),
        },
    }
}

pub fn run_sample(engine: &Engine, sample: &QaSample, mode: RunMode, options: &RunOptions) -> RunRecord {
    let start = Instant::now();
    let scoped = if options.remove_oracle {
        match remove_oracle(sample) {
            Ok(s) => s,
            Err(e) => return error_record(&sample.sample_id, mode, e.to_string()),
        }
    } else {
        sample.clone()
    };
    let mut record = run_query(engine, &sample.sample_id, &Query::from_sample(&scoped), mode);
    if options.record_timing {
        record.elapsed_ms = Some(start.elapsed().as_millis() as u64);
    }
    record
}

/// Runs samples concurrently on `workers` threads; records come back in
/// input order.
pub fn run_samples(engine: &Engine, samples: &[QaSample], mode: RunMode, options: &RunOptions) -> Result<Vec<RunRecord>, rayon::ThreadPoolBuildError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(options.workers.max(1)).build()?;
    Ok(pool.install(|| samples.par_iter().map(|s| run_sample(engine, s, mode, options)).collect()))
}
