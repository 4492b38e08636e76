//! Section-marker parsing of model output.
//!
//! Markers are matched case-insensitively and searched in order: each marker
//! is looked up after the end of the last marker that was found, so a
//! section never contains the marker that follows it.

use serde::{Deserialize, Serialize};

pub const EVIDENCE_MARKER: &str = "EVIDENCE:";
pub const REASONING_MARKER: &str = "REASONING:";
pub const ANSWER_MARKER: &str = "ANSWER:";
pub const CONSISTENCY_MARKER: &str = "CONSISTENCY:";

/// Answer text a model gives when the context does not support an answer.
pub const REFUSAL_SENTINEL: &str = "UNANSWERABLE";

/// Content of each marker's section, `None` where the marker is missing.
pub fn parse_sections(raw: &str, markers: &[&str]) -> Vec<Option<String>> {
    let lower = raw.to_ascii_lowercase();
    let mut cursor = 0usize;
    let mut found: Vec<Option<(usize, usize)>> = Vec::with_capacity(markers.len());
    for marker in markers {
        let m = marker.to_ascii_lowercase();
        match lower[cursor..].find(&m) {
            Some(off) => {
                let start = cursor + off;
                cursor = start + m.len();
                found.push(Some((start, cursor)));
            }
            None => found.push(None),
        }
    }
    (0..markers.len())
        .map(|i| {
            let (_, body_start) = found[i]?;
            let body_end = found[i + 1..]
                .iter()
                .flatten()
                .map(|(s, _)| *s)
                .next()
                .unwrap_or(raw.len());
            Some(raw[body_start..body_end].trim().to_string())
        })
        .collect()
}

/// True when `answer` is the refusal sentinel, ignoring case, surrounding
/// whitespace and trailing periods.
pub fn is_refusal(answer: &str) -> bool {
    answer
        .trim()
        .trim_end_matches('.')
        .trim()
        .eq_ignore_ascii_case(REFUSAL_SENTINEL)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredResponse {
    pub evidence: String,
    pub reasoning: String,
    pub answer: String,
    pub refused: bool,
    /// Some section marker was missing.
    pub degraded: bool,
    pub raw: String,
}

impl StructuredResponse {
    pub fn render(&self) -> String {
        format!(
            "{EVIDENCE_MARKER} {}\n{REASONING_MARKER} {}\n{ANSWER_MARKER} {}",
            self.evidence, self.reasoning, self.answer
        )
    }
}

/// Total: every input yields a response. Without an `ANSWER:` marker the
/// whole text becomes the answer.
pub fn parse_structured(raw: &str) -> StructuredResponse {
    let mut sections = parse_sections(raw, &[EVIDENCE_MARKER, REASONING_MARKER, ANSWER_MARKER]);
    let answer = sections.pop().flatten();
    let reasoning = sections.pop().flatten();
    let evidence = sections.pop().flatten();
    let (evidence, reasoning, answer, degraded) = match answer {
        Some(a) => (
            evidence.clone().unwrap_or_default(),
            reasoning.clone().unwrap_or_default(),
            a,
            evidence.is_none() || reasoning.is_none(),
        ),
        None => (String::new(), String::new(), raw.trim().to_string(), true),
    };
    let refused = is_refusal(&answer);
    StructuredResponse {
        evidence,
        reasoning,
        answer: if refused { REFUSAL_SENTINEL.to_string() } else { answer },
        refused,
        degraded,
        raw: raw.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_three_sections() {
        let r = parse_structured("EVIDENCE: e\nREASONING: r\nANSWER: a");
        assert_eq!((r.evidence.as_str(), r.reasoning.as_str(), r.answer.as_str()), ("e", "r", "a"));
        assert!(!r.refused && !r.degraded);
    }

    #[test]
    fn sentinel_is_a_refusal() {
        let r = parse_structured("ANSWER: UNANSWERABLE");
        assert!(r.refused);
        assert!(r.degraded);
        assert!(parse_structured("evidence: none\nreasoning: -\nanswer: Unanswerable.").refused);
    }

    #[test]
    fn marker_free_prose_is_degraded() {
        let r = parse_structured("the answer is 42");
        assert!(r.degraded);
        assert_eq!(r.answer, "the answer is 42");
        assert!(r.evidence.is_empty() && r.reasoning.is_empty());
    }

    #[test]
    fn markers_are_case_insensitive_and_ordered() {
        let r = parse_structured("Evidence: row 2 says 7\nReasoning: so seven\nAnswer: 7 apples");
        assert_eq!(r.answer, "7 apples");
        assert_eq!(r.evidence, "row 2 says 7");
        // a later repeat of a marker stays inside the answer
        let r = parse_structured("EVIDENCE: x\nREASONING: y\nANSWER: z EVIDENCE: w");
        assert_eq!(r.answer, "z EVIDENCE: w");
    }

    #[test]
    fn generic_sections() {
        let s = parse_sections("CONSISTENCY: consistent\nANSWER: 4", &[CONSISTENCY_MARKER, REASONING_MARKER, ANSWER_MARKER]);
        assert_eq!(s, vec![Some("consistent".into()), None, Some("4".into())]);
    }

    fn fragments() -> impl Strategy<Value = String> {
        let pieces = prop::sample::select(vec![
            "EVIDENCE:", "evidence:", "REASONING:", "Answer:", "ANSWER:", "UNANSWERABLE", " ", "\n",
            "foo", "bar baz", ".", "answer", "EVID", "42",
        ]);
        prop::collection::vec(pieces, 0..16).prop_map(|v| v.concat())
    }

    proptest! {
        #[test]
        fn parse_is_idempotent_on_rendering(raw in fragments()) {
            let first = parse_structured(&raw);
            let second = parse_structured(&first.render());
            prop_assert_eq!(&first.evidence, &second.evidence);
            prop_assert_eq!(&first.reasoning, &second.reasoning);
            prop_assert_eq!(&first.answer, &second.answer);
            prop_assert_eq!(first.refused, second.refused);
            let third = parse_structured(&second.render());
            prop_assert_eq!(&second.render(), &third.render());
        }

        #[test]
        fn refusal_iff_sentinel(raw in fragments()) {
            let r = parse_structured(&raw);
            prop_assert_eq!(r.refused, r.answer == REFUSAL_SENTINEL);
        }
    }
}
