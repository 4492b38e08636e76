//! Recursive-separator chunking with overlap and page provenance.
//!
//! Chunks are contiguous character spans of the document text. A chunk ends
//! at the last occurrence of the coarsest separator that fits inside the size
//! budget (blank line, newline, sentence end, space, then a hard cut). The
//! next chunk starts `overlap` characters before that end, snapped forward to
//! the nearest word boundary so the overlap never exceeds the target. When
//! the overlap window holds no separator at all the hard cut is used and the
//! overlap is exactly the target.
//!
//! All offsets are in `char`s, not bytes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Page;

/// Separator ladder, coarsest first. An empty separator (hard cut) is the
/// implicit last rung.
pub const SEPARATORS: [&str; 4] = ["\n\n", "\n", ". ", " "];

/// Inserted between pages when building a document's concatenated text.
pub const PAGE_JOINER: &str = "\n\n";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkerConfig {
    pub chunk_size: usize,
    pub overlap_fraction: f64,
}

impl Default for ChunkerConfig {
    fn default() -> Self {
        Self {
            chunk_size: 3000,
            overlap_fraction: 0.10,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ChunkError {
    #[error("chunk size must be positive")]
    ZeroChunkSize,
    #[error("overlap fraction {0} outside [0, 1)")]
    BadOverlap(f64),
}

impl ChunkerConfig {
    pub fn validate(&self) -> Result<(), ChunkError> {
        if self.chunk_size == 0 {
            return Err(ChunkError::ZeroChunkSize);
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(ChunkError::BadOverlap(self.overlap_fraction));
        }
        Ok(())
    }

    /// `ceil(chunk_size * overlap_fraction)`, kept strictly below the chunk
    /// size so that chunking always makes progress.
    pub fn overlap_target(&self) -> usize {
        let raw = self.chunk_size as f64 * self.overlap_fraction;
        // 3000 * 0.1 is 300.00000000000006 in binary floating point
        let target = (raw - 1e-9).ceil().max(0.0) as usize;
        target.min(self.chunk_size - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextChunk {
    pub chunk_id: String,
    pub doc_id: String,
    /// Inclusive `(first_page, last_page)`.
    pub page_span: (u32, u32),
    /// Half-open `(start, end)` in chars of the document text.
    pub char_span: (usize, usize),
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageRange {
    pub page_no: u32,
    pub start: usize,
    pub end: usize,
}

/// A document's pages concatenated into one string, with the char range
/// each page occupies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentText {
    pub doc_id: String,
    pub text: String,
    pub pages: Vec<PageRange>,
}

impl DocumentText {
    pub fn from_pages(doc_id: &str, pages: &[Page]) -> Self {
        let mut text = String::new();
        let mut ranges = Vec::with_capacity(pages.len());
        let mut cursor = 0usize;
        for (i, p) in pages.iter().enumerate() {
            if i > 0 {
                text.push_str(PAGE_JOINER);
                cursor += PAGE_JOINER.chars().count();
            }
            let len = p.text.chars().count();
            ranges.push(PageRange {
                page_no: p.page_no,
                start: cursor,
                end: cursor + len,
            });
            text.push_str(&p.text);
            cursor += len;
        }
        Self {
            doc_id: doc_id.to_string(),
            text,
            pages: ranges,
        }
    }

    /// Inclusive page span covering `[start, end)`.
    pub fn page_span(&self, start: usize, end: usize) -> (u32, u32) {
        let Some(last_page) = self.pages.last() else {
            return (1, 1);
        };
        let hits: Vec<&PageRange> = self
            .pages
            .iter()
            .filter(|p| p.start < p.end && p.start < end && p.end > start)
            .collect();
        if let (Some(first), Some(last)) = (hits.first(), hits.last()) {
            return (first.page_no, last.page_no);
        }
        // only separators or empty pages: attribute to the page before
        let owner = self
            .pages
            .iter()
            .rev()
            .find(|p| p.start <= start)
            .unwrap_or(last_page);
        (owner.page_no, owner.page_no)
    }
}

/// Splits `text` into `(start, end)` char spans.
pub fn split_spans(text: &str, config: &ChunkerConfig) -> Result<Vec<(usize, usize)>, ChunkError> {
    config.validate()?;
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let size = config.chunk_size;
    let overlap = config.overlap_target();

    let mut spans = Vec::new();
    if n == 0 {
        return Ok(spans);
    }
    let mut start = 0usize;
    loop {
        if n - start <= size {
            spans.push((start, n));
            return Ok(spans);
        }
        let end = split_point(&chars, start, size, overlap);
        spans.push((start, end));
        start = end - snapped_overlap(&chars, start, end, overlap);
    }
}

/// Chunks one document, assigning ids and page provenance.
pub fn chunk_text(doc: &DocumentText, config: &ChunkerConfig) -> Result<Vec<TextChunk>, ChunkError> {
    let spans = split_spans(&doc.text, config)?;
    let offsets = char_byte_offsets(&doc.text);
    Ok(spans
        .into_iter()
        .enumerate()
        .map(|(i, (s, e))| TextChunk {
            chunk_id: format!("{}#c{:04}", doc.doc_id, i),
            doc_id: doc.doc_id.clone(),
            page_span: doc.page_span(s, e),
            char_span: (s, e),
            text: doc.text[offsets[s]..offsets[e]].to_string(),
        })
        .collect())
}

/// Byte offset of every char index, plus one past the end.
fn char_byte_offsets(text: &str) -> Vec<usize> {
    let mut v: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
    v.push(text.len());
    v
}

/// End of the chunk starting at `start`, in `(start + overlap, start + size]`.
fn split_point(chars: &[char], start: usize, size: usize, overlap: usize) -> usize {
    let limit = start + size;
    let floor = start + overlap;
    for sep in SEPARATORS {
        let sep: Vec<char> = sep.chars().collect();
        let mut q = limit;
        while q > floor && q >= start + sep.len() {
            if chars[q - sep.len()..q] == sep[..] {
                return q;
            }
            q -= 1;
        }
    }
    limit
}

fn is_boundary(chars: &[char], pos: usize) -> bool {
    pos > 0 && matches!(chars[pos - 1], ' ' | '\n')
}

/// Overlap length for the chunk after `[start, end)`: the largest length up
/// to `target` whose first char sits on a word boundary, or exactly `target`
/// when the window has no boundary.
fn snapped_overlap(chars: &[char], start: usize, end: usize, target: usize) -> usize {
    if target == 0 {
        return 0;
    }
    let target = target.min(end - start - 1).max(1);
    (end - target..end)
        .find(|&p| is_boundary(chars, p))
        .map_or(target, |p| end - p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ChunkerConfig {
        ChunkerConfig::default()
    }

    #[test]
    fn overlap_target_is_300() {
        assert_eq!(cfg().overlap_target(), 300);
        let tiny = ChunkerConfig {
            chunk_size: 10,
            overlap_fraction: 0.99,
        };
        assert_eq!(tiny.overlap_target(), 9);
    }

    #[test]
    fn short_text_is_single_chunk() {
        let text = "x".repeat(1000);
        assert_eq!(split_spans(&text, &cfg()).unwrap(), vec![(0, 1000)]);
    }

    #[test]
    fn separator_free_text_overlaps_by_300() {
        let text = "y".repeat(5700);
        let spans = split_spans(&text, &cfg()).unwrap();
        assert_eq!(spans, vec![(0, 3000), (2700, 5700)]);
    }

    #[test]
    fn empty_text_has_no_chunks() {
        assert!(split_spans("", &cfg()).unwrap().is_empty());
    }

    #[test]
    fn bad_config_rejected() {
        let zero = ChunkerConfig {
            chunk_size: 0,
            overlap_fraction: 0.1,
        };
        assert_eq!(split_spans("a", &zero), Err(ChunkError::ZeroChunkSize));
        let full = ChunkerConfig {
            chunk_size: 10,
            overlap_fraction: 1.0,
        };
        assert!(matches!(split_spans("a", &full), Err(ChunkError::BadOverlap(_))));
    }

    #[test]
    fn prefers_paragraph_breaks() {
        // paragraphs of 499 chars + "\n" => a blank line every 500 chars
        let para = format!("{}\n\n", "w".repeat(498));
        let text = para.repeat(10);
        let spans = split_spans(&text, &cfg()).unwrap();
        assert_eq!(spans[0], (0, 3000));
        // every non-final chunk ends right after a blank line
        for &(_, e) in &spans[..spans.len() - 1] {
            assert_eq!(&text[e - 2..e], "\n\n");
        }
    }

    #[test]
    fn overlap_snaps_to_word_start() {
        // words of 9 letters + space: boundaries every 10 chars
        let text = "abcdefghi ".repeat(600);
        let spans = split_spans(&text, &cfg()).unwrap();
        for w in spans.windows(2) {
            let ov = w[0].1 - w[1].0;
            assert!(ov <= 300 && ov > 290, "overlap {ov}");
            assert!(is_boundary(&text.chars().collect::<Vec<_>>(), w[1].0));
        }
    }

    #[test]
    fn page_span_tracks_pages() {
        let pages: Vec<Page> = (1..=3)
            .map(|n| Page {
                doc_id: "d".into(),
                page_no: n,
                text: "z".repeat(2000),
                image_ref: None,
            })
            .collect();
        let doc = DocumentText::from_pages("d", &pages);
        assert_eq!(doc.text.chars().count(), 6004);
        let chunks = chunk_text(&doc, &cfg()).unwrap();
        // the page break is a paragraph break, so the first cut lands there
        assert_eq!(chunks[0].page_span, (1, 1));
        // its overlap snaps to the page break, leaving page 1 behind
        assert_eq!(chunks[1].page_span.0, 2);
        assert_eq!(chunks[0].chunk_id, "d#c0000");
        assert_eq!(chunks.last().unwrap().page_span.1, 3);
    }

    #[test]
    fn multibyte_text_is_split_on_chars() {
        let text = "é".repeat(3500);
        let doc = DocumentText {
            doc_id: "d".into(),
            text: text.clone(),
            pages: vec![PageRange {
                page_no: 1,
                start: 0,
                end: 3500,
            }],
        };
        let chunks = chunk_text(&doc, &cfg()).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].text.chars().count(), 3000);
        assert_eq!(chunks[1].char_span, (2700, 3500));
    }
}
