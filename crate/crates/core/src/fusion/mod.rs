//! Consistency-constrained fusion of the textual and visual pipelines, the
//! early-fusion ablation and the full two-pipeline orchestrator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{RunMode, RunRecord, Usage};
use crate::llm::{
    is_refusal, parse_sections, parse_structured, GenRequest, GenSettings, Message, ANSWER_MARKER,
    CONSISTENCY_MARKER, REASONING_MARKER, REFUSAL_SENTINEL,
};
use crate::pipeline::prompt::{answer_guidance, build_unimodal_prompt, QUESTION_LABEL};
use crate::pipeline::{run_textual, run_visual, visual_units, Engine, PipelineOutput, Query};
use crate::retrieval::Modality;

pub const TEXT_BLOCK_LABEL: &str = "[Textual pipeline]";
pub const VISUAL_BLOCK_LABEL: &str = "[Visual pipeline]";
pub const EVIDENCE_LABEL: &str = "Curated evidence:";
pub const CHAIN_LABEL: &str = "Reasoning chain:";
pub const CANDIDATE_LABEL: &str = "Candidate answer:";
const EMPTY_FIELD: &str = "(empty)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyVerdict {
    Consistent,
    Reconciled,
    SingleModality,
}

/// The fusion step's outcome without the embedded pipeline outputs, as
/// stored on a run record next to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionSummary {
    pub verdict: ConsistencyVerdict,
    pub reasoning: String,
    pub contributing: Vec<Modality>,
    /// The fusion call failed and a single pipeline's answer was used.
    #[serde(default)]
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub final_answer: String,
    pub refused: bool,
    pub verdict: ConsistencyVerdict,
    pub fusion_reasoning: String,
    pub contributing: Vec<Modality>,
    pub text: Option<PipelineOutput>,
    pub visual: Option<PipelineOutput>,
    /// A pipeline or the fusion call failed.
    pub degraded: bool,
    pub error: Option<String>,
    /// Usage of the fusion call itself.
    pub usage: Usage,
}

impl FusionResult {
    pub fn summary(&self) -> FusionSummary {
        FusionSummary {
            verdict: self.verdict,
            reasoning: self.fusion_reasoning.clone(),
            contributing: self.contributing.clone(),
            fallback: self.degraded && self.verdict == ConsistencyVerdict::SingleModality,
            error: self.error.clone(),
        }
    }

    pub fn into_record(self, sample_id: &str, mode: RunMode) -> RunRecord {
        let mut usage = self.usage;
        for out in [&self.text, &self.visual].into_iter().flatten() {
            usage.add(out.usage);
        }
        RunRecord {
            sample_id: sample_id.to_string(),
            mode,
            final_answer: self.final_answer.clone(),
            refused: self.refused,
            degraded: self.degraded,
            error: self.error.clone(),
            fusion: Some(self.summary()),
            text: self.text,
            visual: self.visual,
            usage,
            elapsed_ms: None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("neither pipeline produced an output (text: {text}; visual: {visual})")]
    NoHealthyPipeline { text: String, visual: String },
}

fn field(s: &str) -> &str {
    if s.trim().is_empty() {
        EMPTY_FIELD
    } else {
        s.trim()
    }
}

fn block(label: &str, out: &PipelineOutput) -> String {
    format!(
        "{label}\n{EVIDENCE_LABEL} {}\n{CHAIN_LABEL} {}\n{CANDIDATE_LABEL} {}\n",
        field(&out.evidence),
        field(&out.reasoning),
        field(&out.answer)
    )
}

/// Builds the fusion request: both chains labeled per modality, then the
/// consistency, reconciliation and output instructions.
pub fn build_fusion_prompt(
    question: &str,
    text: &PipelineOutput,
    visual: &PipelineOutput,
    answer_type: crate::corpus::AnswerType,
    allow_refusal: bool,
    settings: &GenSettings,
) -> GenRequest {
    let mut body = format!("{QUESTION_LABEL} {question}\n\n");
    body.push_str(&block(TEXT_BLOCK_LABEL, text));
    body.push('\n');
    body.push_str(&block(VISUAL_BLOCK_LABEL, visual));
    body.push_str(&format!(
        "\nInstructions:\n\
         1. Judge whether the two reasoning chains are consistent with each other.\n\
         2. If they disagree, reconcile them by re-evaluating the evidence each one presents and adjusting the reasoning steps.\n\
         3. Give one final answer. {}\n",
        answer_guidance(answer_type)
    ));
    if allow_refusal {
        body.push_str(&format!(
            "If neither chain supports an answer, give exactly {REFUSAL_SENTINEL} as the answer.\n"
        ));
    }
    body.push_str(&format!(
        "Use exactly this format:\n{CONSISTENCY_MARKER} consistent or inconsistent\n{REASONING_MARKER} <how the chains were compared and reconciled>\n{ANSWER_MARKER} <answer>"
    ));
    GenRequest::with_settings(
        vec![
            Message::system("You reconcile two analyses of the same question into one answer."),
            Message::user(body),
        ],
        vec![],
        settings,
    )
}

fn pass_through(kept: &PipelineOutput, text: PipelineOutput, visual: PipelineOutput, degraded: bool, error: Option<String>) -> FusionResult {
    FusionResult {
        final_answer: kept.answer.clone(),
        refused: kept.refused,
        verdict: ConsistencyVerdict::SingleModality,
        fusion_reasoning: String::new(),
        contributing: vec![kept.modality],
        text: Some(text),
        visual: Some(visual),
        degraded,
        error,
        usage: Usage::default(),
    }
}

/// Fuses two pipeline outputs. One healthy output passes through without a
/// call. Two refusals still go through the fusion call but always end in a
/// refusal. If the fusion call fails, the output with the higher top-1
/// retrieval score is used (text on ties).
pub fn fuse(engine: &Engine, query: &Query, text: PipelineOutput, visual: PipelineOutput) -> Result<FusionResult, FusionError> {
    match (text.is_healthy(), visual.is_healthy()) {
        (false, false) => {
            return Err(FusionError::NoHealthyPipeline {
                text: text.error.clone().unwrap_or_default(),
                visual: visual.error.clone().unwrap_or_default(),
            })
        }
        (true, false) => {
            let kept = text.clone();
            let err = visual.error.clone();
            return Ok(pass_through(&kept, text, visual, true, err));
        }
        (false, true) => {
            let kept = visual.clone();
            let err = text.error.clone();
            return Ok(pass_through(&kept, text, visual, true, err));
        }
        (true, true) => {}
    }
    let both_refused = text.refused && visual.refused;

    let cfg = &engine.config;
    let request = build_fusion_prompt(&query.question, &text, &visual, query.answer_type, cfg.allow_refusal, &cfg.generation);
    match engine.llm.generate(&request) {
        Ok(generation) => {
            let sections = parse_sections(&generation.text, &[CONSISTENCY_MARKER, REASONING_MARKER, ANSWER_MARKER]);
            let consistency = sections[0].clone().unwrap_or_default();
            let reasoning = sections[1].clone().unwrap_or_default();
            let answer = sections[2].clone().unwrap_or_else(|| generation.text.trim().to_string());
            let verdict = if consistency.trim().to_ascii_lowercase().starts_with("consistent") {
                ConsistencyVerdict::Consistent
            } else {
                ConsistencyVerdict::Reconciled
            };
            let refused = both_refused || is_refusal(&answer);
            Ok(FusionResult {
                final_answer: if refused { REFUSAL_SENTINEL.to_string() } else { answer },
                refused,
                verdict,
                fusion_reasoning: reasoning,
                contributing: vec![Modality::Text, Modality::Visual],
                text: Some(text),
                visual: Some(visual),
                degraded: false,
                error: None,
                usage: generation.usage,
            })
        }
        Err(e) => {
            log::warn!("fusion call failed, falling back to one modality: {e}");
            let t = text.top_score().unwrap_or(f64::NEG_INFINITY);
            let v = visual.top_score().unwrap_or(f64::NEG_INFINITY);
            let kept = if v > t { visual.clone() } else { text.clone() };
            Ok(pass_through(&kept, text, visual, true, Some(e.to_string())))
        }
    }
}

/// Early-fusion ablation: the visual retriever's pages, their images and
/// their extracted text in one call.
pub fn run_early_fusion(engine: &Engine, query: &Query) -> FusionResult {
    let k = engine.config.k_visual;
    let output = match visual_units(engine, query, k, true) {
        Ok((hits, units)) => {
            let cfg = &engine.config;
            let request = build_unimodal_prompt(&query.question, &units, Modality::Visual, cfg.style, cfg.allow_refusal, query.answer_type, &cfg.generation);
            match engine.llm.generate(&request) {
                Ok(g) => {
                    let p = parse_structured(&g.text);
                    PipelineOutput {
                        modality: Modality::Visual,
                        k,
                        hits,
                        evidence: p.evidence,
                        reasoning: p.reasoning,
                        answer: p.answer,
                        refused: p.refused,
                        degraded: false,
                        parse_degraded: p.degraded,
                        error: None,
                        usage: g.usage,
                    }
                }
                Err(e) => PipelineOutput::failed(Modality::Visual, k, hits, e.to_string()),
            }
        }
        Err((hits, e)) => PipelineOutput::failed(Modality::Visual, k, hits, e),
    };
    FusionResult {
        final_answer: output.answer.clone(),
        refused: output.refused,
        verdict: ConsistencyVerdict::Reconciled,
        fusion_reasoning: output.reasoning.clone(),
        contributing: vec![Modality::Text, Modality::Visual],
        degraded: output.degraded,
        error: output.error.clone(),
        text: None,
        visual: Some(output),
        usage: Usage::default(),
    }
}

/// Both pipelines concurrently, then fusion.
pub fn run_visdomrag(engine: &Engine, query: &Query) -> Result<FusionResult, FusionError> {
    let (text, visual) = rayon::join(|| run_textual(engine, query), || run_visual(engine, query));
    fuse(engine, query, text, visual)
}
