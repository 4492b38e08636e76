//! Prompt text for the unimodal pipelines.
//!
//! Layout of a unimodal user message:
//!
//! ```text
//! Question: <question>
//!
//! Context (<n> units):
//! [1] doc: <doc_id> | page: <page or first-last>
//! <chunk text, or an image note>
//! ...
//!
//! Instructions:
//! <numbered steps and output format>
//! ```

use serde::{Deserialize, Serialize};

use crate::corpus::AnswerType;
use crate::llm::{GenRequest, GenSettings, Message, ANSWER_MARKER, EVIDENCE_MARKER, REASONING_MARKER, REFUSAL_SENTINEL};
use crate::retrieval::Modality;

pub const QUESTION_LABEL: &str = "Question:";
pub const CONTEXT_LABEL: &str = "Context";
pub const INSTRUCTIONS_LABEL: &str = "Instructions:";
pub const UNIT_PREFIX: &str = "doc:";
pub const IMAGE_NOTE: &str = "(page image attached";
pub const PAGE_TEXT_LABEL: &str = "Extracted page text:";
pub const EMPTY_PAGE_TEXT: &str = "(this page has no extractable text)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    /// Evidence curation, then reasoning, then the answer.
    #[default]
    Full,
    /// Answer directly.
    Simple,
}

impl std::str::FromStr for PromptStyle {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Self::Full),
            "simple" => Ok(Self::Simple),
            other => Err(format!("unknown prompt style `{other}` (expected full or simple)")),
        }
    }
}

/// One retrieved unit as it appears in a prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextUnit {
    pub doc_id: String,
    pub pages: (u32, u32),
    /// Inline text for the text modality, extracted page text for early
    /// fusion, `None` for a bare page image.
    pub text: Option<String>,
    /// Store-relative image ref for visual units.
    pub image_ref: Option<String>,
}

impl ContextUnit {
    pub fn header(&self, n: usize) -> String {
        let (a, b) = self.pages;
        let page = if a == b { a.to_string() } else { format!("{a}-{b}") };
        format!("[{n}] {UNIT_PREFIX} {} | page: {page}", self.doc_id)
    }
}

const SYSTEM_PROMPT: &str = "You answer questions about document collections using only the context you are given.";

pub fn answer_guidance(answer_type: AnswerType) -> &'static str {
    match answer_type {
        AnswerType::Binary => "Answer with a single word: yes or no.",
        AnswerType::ShortText => "Answer with a short phrase of a few words, not a full sentence.",
        AnswerType::FreeText => "Answer in one or two complete sentences.",
    }
}

pub fn refusal_instruction() -> String {
    format!(
        "If the context does not contain enough information to answer, give exactly {REFUSAL_SENTINEL} as the answer."
    )
}

fn context_block(units: &[ContextUnit], modality: Modality) -> String {
    let mut out = format!("{CONTEXT_LABEL} ({} units):\n", units.len());
    if units.is_empty() {
        out.push_str("(no context was retrieved)\n");
    }
    let mut image_no = 0;
    for (i, unit) in units.iter().enumerate() {
        out.push_str(&unit.header(i + 1));
        out.push('\n');
        if unit.image_ref.is_some() {
            image_no += 1;
            out.push_str(&format!("{IMAGE_NOTE} as image {image_no})\n"));
        }
        match (&unit.text, modality) {
            (Some(t), Modality::Text) => {
                out.push_str(t);
                out.push('\n');
            }
            (Some(t), Modality::Visual) => {
                out.push_str(PAGE_TEXT_LABEL);
                out.push('\n');
                out.push_str(if t.trim().is_empty() { EMPTY_PAGE_TEXT } else { t });
                out.push('\n');
            }
            (None, _) => {}
        }
        out.push('\n');
    }
    out
}

fn full_instructions(modality: Modality) -> String {
    let source = match modality {
        Modality::Text => "the retrieved text chunks",
        Modality::Visual => "the attached page images, including their text, tables, charts and figures",
    };
    format!(
        "1. Extract the relevant evidence from {source}. Quote or describe each piece and cite its unit number.\n\
         2. Reason step by step, linking the individual pieces of evidence to the question.\n\
         3. Give the final answer."
    )
}

fn output_format(style: PromptStyle) -> String {
    match style {
        PromptStyle::Full => format!(
            "Use exactly this format:\n{EVIDENCE_MARKER} <evidence>\n{REASONING_MARKER} <step-by-step reasoning>\n{ANSWER_MARKER} <answer>"
        ),
        PromptStyle::Simple => format!("Use exactly this format:\n{ANSWER_MARKER} <answer>"),
    }
}

/// Builds the single generation request of a unimodal pipeline. Visual units
/// attach their images in the given (rank) order.
pub fn build_unimodal_prompt(
    question: &str,
    units: &[ContextUnit],
    modality: Modality,
    style: PromptStyle,
    allow_refusal: bool,
    answer_type: AnswerType,
    settings: &GenSettings,
) -> GenRequest {
    let mut body = format!("{QUESTION_LABEL} {question}\n\n");
    body.push_str(&context_block(units, modality));
    body.push_str(INSTRUCTIONS_LABEL);
    body.push('\n');
    match style {
        PromptStyle::Full => {
            body.push_str(&full_instructions(modality));
            body.push('\n');
        }
        PromptStyle::Simple => body.push_str("Answer the question from the context above.\n"),
    }
    body.push_str(answer_guidance(answer_type));
    body.push('\n');
    if allow_refusal {
        body.push_str(&refusal_instruction());
        body.push('\n');
    }
    body.push_str(&output_format(style));

    let images = units.iter().filter_map(|u| u.image_ref.clone()).collect();
    GenRequest::with_settings(vec![Message::system(SYSTEM_PROMPT), Message::user(body)], images, settings)
}
