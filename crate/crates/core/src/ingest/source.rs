//! Opening source documents.
//!
//! Two layouts are understood:
//! - a text file whose pages are separated by form feeds (`\x0c`), as
//!   written by `pdftotext`; this gives an embedded text layer per page;
//! - a directory of page images (`*.png`, sorted by file name), optionally
//!   with a `<stem>.txt` text layer next to each image.

use std::fs;
use std::path::{Path, PathBuf};

use super::IngestError;

/// US Letter in PostScript points.
pub const LETTER_PT: (f64, f64) = (612.0, 792.0);

#[derive(Debug, Clone, PartialEq)]
pub struct SourcePage {
    pub doc_id: String,
    pub page_no: u32,
    pub text_layer: Option<String>,
    /// Existing raster for this page, if the source provides one (or once
    /// it has been rendered).
    pub image: Option<PathBuf>,
    /// Physical page size in points (1/72 inch).
    pub size_pt: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceDocument {
    pub doc_id: String,
    pub path: PathBuf,
    pub pages: Vec<SourcePage>,
}

impl SourceDocument {
    pub fn open(doc_id: &str, path: &Path) -> Result<Self, IngestError> {
        let io = |source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        };
        let meta = fs::metadata(path).map_err(io)?;
        let pages = if meta.is_dir() {
            open_image_dir(doc_id, path)?
        } else {
            if meta.len() == 0 {
                return Err(IngestError::EmptySource(path.to_path_buf()));
            }
            let bytes = fs::read(path).map_err(io)?;
            let text = String::from_utf8(bytes).map_err(|_| IngestError::Unsupported {
                path: path.to_path_buf(),
                reason: "not UTF-8 text; render PDFs to a page-image directory first".into(),
            })?;
            split_form_feeds(&text)
                .into_iter()
                .enumerate()
                .map(|(i, t)| SourcePage {
                    doc_id: doc_id.to_string(),
                    page_no: i as u32 + 1,
                    text_layer: Some(t.to_string()),
                    image: None,
                    size_pt: LETTER_PT,
                })
                .collect()
        };
        if pages.is_empty() {
            return Err(IngestError::EmptySource(path.to_path_buf()));
        }
        Ok(Self {
            doc_id: doc_id.to_string(),
            path: path.to_path_buf(),
            pages,
        })
    }
}

/// `pdftotext` terminates every page with a form feed, so a trailing empty
/// segment is not a page.
fn split_form_feeds(text: &str) -> Vec<&str> {
    let mut parts: Vec<&str> = text.split('\x0c').collect();
    if parts.len() > 1 && parts.last().is_some_and(|p| p.trim().is_empty()) {
        parts.pop();
    }
    parts
}

fn open_image_dir(doc_id: &str, dir: &Path) -> Result<Vec<SourcePage>, IngestError> {
    let io = |source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut images: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    images.sort();
    images
        .into_iter()
        .enumerate()
        .map(|(i, image)| {
            let layer = image.with_extension("txt");
            let text_layer = if layer.is_file() {
                Some(fs::read_to_string(&layer).map_err(|source| IngestError::Io {
                    path: layer.clone(),
                    source,
                })?)
            } else {
                None
            };
            Ok(SourcePage {
                doc_id: doc_id.to_string(),
                page_no: i as u32 + 1,
                text_layer,
                image: Some(image),
                size_pt: LETTER_PT,
            })
        })
        .collect()
}
