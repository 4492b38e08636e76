//! Deterministic offline stand-in for a generation model.
//!
//! It reads the prompt layouts this crate produces. For a unimodal prompt it
//! picks the context sentence sharing the most content words with the
//! question, and refuses (when allowed) if that sentence covers fewer than
//! half of them. Attached images are "read" through a table of page texts
//! keyed by image content hash. Fusion prompts are answered by comparing the
//! two candidate answers.

use std::collections::{HashMap, HashSet};

use super::{GenError, GenRequest, ImageData, LlmProvider, ANSWER_MARKER, CONSISTENCY_MARKER, EVIDENCE_MARKER, REASONING_MARKER, REFUSAL_SENTINEL};
use crate::benchbuild::{METADATA_TITLE_LABEL, QUERY_AUG_TAG};
use crate::fusion::{CANDIDATE_LABEL, TEXT_BLOCK_LABEL, VISUAL_BLOCK_LABEL};
use crate::pipeline::prompt::{EMPTY_PAGE_TEXT, IMAGE_NOTE, INSTRUCTIONS_LABEL, PAGE_TEXT_LABEL, QUESTION_LABEL};
use crate::retrieval::tokenize;

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "is", "are", "was", "were", "be", "been", "what", "which", "who", "whom", "how", "when",
    "where", "why", "in", "on", "at", "to", "for", "by", "with", "from", "and", "or", "does", "do", "did", "this",
    "that", "these", "those", "it", "its", "as", "according", "there", "has", "have", "had",
];

#[derive(Debug, Clone, Default)]
pub struct ExtractiveMock {
    page_texts: HashMap<String, String>,
}

fn content_tokens(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    tokenize(text)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

fn sentences(text: &str) -> Vec<String> {
    text.lines()
        .flat_map(|l| l.split(". "))
        .map(|s| s.trim().trim_end_matches('.').trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn is_scaffolding(line: &str) -> bool {
    let l = line.trim();
    (l.starts_with('[') && l.contains("] doc:"))
        || l.starts_with(IMAGE_NOTE)
        || l == PAGE_TEXT_LABEL
        || l == EMPTY_PAGE_TEXT
        || l.starts_with("Context (")
        || l == "(no context was retrieved)"
}

fn section_after<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    let start = text.find(label)? + label.len();
    let rest = &text[start..];
    Some(rest.lines().next().unwrap_or("").trim())
}

impl ExtractiveMock {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers the text "visible" in an image with the given content.
    pub fn with_page_text(mut self, image_bytes: &[u8], text: &str) -> Self {
        let sha = ImageData::from_bytes("", image_bytes.to_vec()).sha256;
        self.page_texts.insert(sha, text.to_string());
        self
    }

    pub fn respond(&self, request: &GenRequest, images: &[ImageData]) -> String {
        let prompt = request.messages.last().map(|m| m.text.as_str()).unwrap_or("");
        if prompt.contains(QUERY_AUG_TAG) {
            return self.rewrite(prompt);
        }
        if prompt.contains(TEXT_BLOCK_LABEL) && prompt.contains(VISUAL_BLOCK_LABEL) {
            return self.fuse(prompt);
        }
        self.answer(prompt, images)
    }

    fn answer(&self, prompt: &str, images: &[ImageData]) -> String {
        let question = section_after(prompt, QUESTION_LABEL).unwrap_or("");
        let context_end = prompt.rfind(&format!("\n{INSTRUCTIONS_LABEL}")).unwrap_or(prompt.len());
        let context_start = prompt.find("\n\n").map(|i| i + 2).unwrap_or(0).min(context_end);
        let instructions = &prompt[context_end..];

        let mut candidates: Vec<String> = prompt[context_start..context_end]
            .lines()
            .filter(|l| !is_scaffolding(l))
            .flat_map(sentences)
            .collect();
        for img in images {
            if let Some(text) = self.page_texts.get(&img.sha256) {
                candidates.extend(sentences(text));
            }
        }

        let wanted = content_tokens(question);
        let best = candidates
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let toks: HashSet<String> = tokenize(s).into_iter().collect();
                (wanted.iter().filter(|w| toks.contains(*w)).count(), i)
            })
            .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        let covered = best.is_some_and(|(score, _)| score > 0 && score * 2 >= wanted.len());
        let allow_refusal = instructions.contains(REFUSAL_SENTINEL);
        let binary = instructions.contains("yes or no");
        let full = instructions.contains(EVIDENCE_MARKER);

        let (evidence, answer) = match best {
            _ if allow_refusal && !covered => ("none of the context addresses the question".to_string(), REFUSAL_SENTINEL.to_string()),
            Some((score, i)) if score > 0 => {
                let sentence = &candidates[i];
                let answer = if binary {
                    if covered { "yes" } else { "no" }.to_string()
                } else {
                    extract_span(sentence, &wanted)
                };
                (sentence.clone(), answer)
            }
            _ => (String::new(), if binary { "no" } else { "unknown" }.to_string()),
        };
        if full {
            format!(
                "{EVIDENCE_MARKER} {evidence}\n{REASONING_MARKER} The question asks about {}; the evidence states it directly.\n{ANSWER_MARKER} {answer}",
                wanted.join(" ")
            )
        } else {
            format!("{ANSWER_MARKER} {answer}")
        }
    }

    fn fuse(&self, prompt: &str) -> String {
        let text_block = prompt.find(TEXT_BLOCK_LABEL).map(|i| &prompt[i..]).unwrap_or("");
        let visual_block = prompt.find(VISUAL_BLOCK_LABEL).map(|i| &prompt[i..]).unwrap_or("");
        let text = section_after(text_block, CANDIDATE_LABEL).unwrap_or("").to_string();
        let visual = section_after(visual_block, CANDIDATE_LABEL).unwrap_or("").to_string();
        let norm = |s: &str| tokenize(s).join(" ");
        let (verdict, answer) = if norm(&text) == norm(&visual) {
            ("consistent", text)
        } else if super::is_refusal(&text) || text.is_empty() {
            ("inconsistent", visual)
        } else {
            ("inconsistent", text)
        };
        format!(
            "{CONSISTENCY_MARKER} {verdict}\n{REASONING_MARKER} Compared the textual and visual chains and kept the better supported answer.\n{ANSWER_MARKER} {answer}"
        )
    }

    fn rewrite(&self, prompt: &str) -> String {
        let question = section_after(prompt, QUESTION_LABEL).unwrap_or("").trim_end_matches('?');
        let title = section_after(prompt, METADATA_TITLE_LABEL).unwrap_or("the document");
        let frames = ["in", "according to", "as reported in", "based on", "as stated in"];
        frames
            .iter()
            .enumerate()
            .map(|(i, f)| format!("{}) {question} {f} {title}?", i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Words of `sentence` that neither repeat the question nor are stopwords;
/// the whole sentence when nothing is left.
fn extract_span(sentence: &str, question_tokens: &[String]) -> String {
    let kept: Vec<&str> = sentence
        .split_whitespace()
        .filter(|w| {
            let toks = tokenize(w);
            !toks.is_empty()
                && toks
                    .iter()
                    .any(|t| !question_tokens.contains(t) && !STOPWORDS.contains(&t.as_str()))
        })
        .collect();
    if kept.is_empty() {
        sentence.to_string()
    } else {
        kept.join(" ").trim_end_matches(['.', ',', ';']).to_string()
    }
}

impl LlmProvider for ExtractiveMock {
    fn complete(&self, request: &GenRequest, images: &[ImageData]) -> Result<String, GenError> {
        Ok(self.respond(request, images))
    }
}
