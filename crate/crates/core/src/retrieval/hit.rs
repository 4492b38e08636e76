use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Visual,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Visual => "visual",
        }
    }
}

/// One ranked retrieval unit: a chunk for text, a page for visual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub unit_id: String,
    pub score: f64,
    pub modality: Modality,
    pub doc_id: String,
    /// 1-based.
    pub rank: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_no: Option<u32>,
}

pub fn page_unit_id(doc_id: &str, page_no: u32) -> String {
    format!("{doc_id}#p{page_no:04}")
}

/// A scored unit before ranking.
#[derive(Debug, Clone)]
pub(crate) struct Candidate<'a> {
    pub unit_id: &'a str,
    pub doc_id: &'a str,
    pub page_no: Option<u32>,
    pub score: f64,
}

/// Descending score, ties by ascending unit id.
pub(crate) fn hit_order(a: &Candidate<'_>, b: &Candidate<'_>) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.unit_id.cmp(b.unit_id))
}

pub(crate) fn rank_top_k(
    mut candidates: Vec<Candidate<'_>>,
    k: usize,
    modality: Modality,
) -> Vec<ScoredHit> {
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k, hit_order);
        candidates.truncate(k);
    }
    candidates.sort_by(hit_order);
    candidates
        .into_iter()
        .enumerate()
        .map(|(i, c)| ScoredHit {
            unit_id: c.unit_id.to_string(),
            score: c.score,
            modality,
            doc_id: c.doc_id.to_string(),
            rank: i as u32 + 1,
            page_no: c.page_no,
        })
        .collect()
}

/// Checks the rank, ordering and tie-break invariants of one result list.
pub fn check_ranking(hits: &[ScoredHit]) -> Result<(), String> {
    for (i, h) in hits.iter().enumerate() {
        if h.rank as usize != i + 1 {
            return Err(format!("hit {i} has rank {}", h.rank));
        }
    }
    for w in hits.windows(2) {
        match w[0].score.total_cmp(&w[1].score) {
            Ordering::Less => return Err(format!("{} scores below {}", w[0].unit_id, w[1].unit_id)),
            Ordering::Equal if w[0].unit_id > w[1].unit_id => {
                return Err(format!("tie {} / {} out of order", w[0].unit_id, w[1].unit_id))
            }
            _ => {}
        }
    }
    Ok(())
}
