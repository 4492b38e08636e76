use std::path::Path;
use std::process::Command;

use thiserror::Error;

use super::source::{SourceDocument, SourcePage};
use crate::corpus::Page;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("page {page_no} has no text layer")]
    NoTextLayer { page_no: u32 },
    #[error("page {page_no} has no image to read")]
    NoImage { page_no: u32 },
    #[error("extractor command failed on page {page_no}: {message}")]
    Command { page_no: u32, message: String },
}

/// Page to text. Implementations must be deterministic for a fixed input.
pub trait TextExtractor: Send + Sync {
    fn name(&self) -> &str;

    fn extract(&self, page: &SourcePage) -> Result<String, ExtractError>;

    /// Whether `extract` may be called from several threads at once.
    fn supports_concurrency(&self) -> bool {
        true
    }
}

/// Reads the text layer embedded in the source.
#[derive(Debug, Clone, Copy, Default)]
pub struct TextLayerExtractor;

impl TextExtractor for TextLayerExtractor {
    fn name(&self) -> &str {
        "text-layer"
    }

    fn extract(&self, page: &SourcePage) -> Result<String, ExtractError> {
        page.text_layer
            .clone()
            .ok_or(ExtractError::NoTextLayer {
                page_no: page.page_no,
            })
    }
}

/// Runs an external OCR program on the page image and reads its stdout.
/// `{image}` in the argument list is replaced by the image path, e.g.
/// `tesseract {image} stdout`.
#[derive(Debug, Clone)]
pub struct CommandExtractor {
    pub program: String,
    pub args: Vec<String>,
    pub concurrent: bool,
}

impl CommandExtractor {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
            concurrent: false,
        }
    }

    fn run(&self, page_no: u32, image: &Path) -> Result<String, ExtractError> {
        let image = image.to_string_lossy();
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| a.replace("{image}", &image))
            .collect();
        let out = Command::new(&self.program)
            .args(&args)
            .output()
            .map_err(|e| ExtractError::Command {
                page_no,
                message: e.to_string(),
            })?;
        if !out.status.success() {
            return Err(ExtractError::Command {
                page_no,
                message: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            });
        }
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    }
}

impl TextExtractor for CommandExtractor {
    fn name(&self) -> &str {
        &self.program
    }

    fn extract(&self, page: &SourcePage) -> Result<String, ExtractError> {
        let image = page.image.as_deref().ok_or(ExtractError::NoImage {
            page_no: page.page_no,
        })?;
        self.run(page.page_no, image)
    }

    fn supports_concurrency(&self) -> bool {
        self.concurrent
    }
}

/// Extracts every page's text. A failing page gets empty text and a
/// warning; the document is never aborted.
pub fn extract_text(
    document: &SourceDocument,
    extractor: &dyn TextExtractor,
) -> (Vec<Page>, Vec<String>) {
    let mut warnings = Vec::new();
    let pages = document
        .pages
        .iter()
        .map(|sp| {
            let text = match extractor.extract(sp) {
                Ok(t) => t,
                Err(e) => {
                    let msg = format!("{}: {e}", document.doc_id);
                    log::warn!("{msg}");
                    warnings.push(msg);
                    String::new()
                }
            };
            Page {
                doc_id: document.doc_id.clone(),
                page_no: sp.page_no,
                text,
                image_ref: None,
            }
        })
        .collect();
    (pages, warnings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::source::LETTER_PT;
    use std::path::PathBuf;

    fn doc(texts: &[&str]) -> SourceDocument {
        SourceDocument {
            doc_id: "d".into(),
            path: PathBuf::from("d.txt"),
            pages: texts
                .iter()
                .enumerate()
                .map(|(i, t)| SourcePage {
                    doc_id: "d".into(),
                    page_no: i as u32 + 1,
                    text_layer: Some(t.to_string()),
                    image: None,
                    size_pt: LETTER_PT,
                })
                .collect(),
        }
    }

    struct FailsOnPage(u32);

    impl TextExtractor for FailsOnPage {
        fn name(&self) -> &str {
            "flaky"
        }
        fn extract(&self, page: &SourcePage) -> Result<String, ExtractError> {
            if page.page_no == self.0 {
                Err(ExtractError::Command {
                    page_no: page.page_no,
                    message: "boom".into(),
                })
            } else {
                Ok(page.text_layer.clone().unwrap_or_default())
            }
        }
    }

    #[test]
    fn single_page() {
        let (pages, warnings) = extract_text(&doc(&["hello"]), &TextLayerExtractor);
        assert_eq!(pages[0].text, "hello");
        assert!(warnings.is_empty());
    }

    #[test]
    fn failing_page_becomes_empty_with_warning() {
        let (pages, warnings) = extract_text(&doc(&["a", "b", "c"]), &FailsOnPage(2));
        assert_eq!(pages.len(), 3);
        assert_eq!(pages[1].text, "");
        assert_eq!(pages[2].text, "c");
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn command_extractor_reads_stdout() {
        let mut d = doc(&["ignored"]);
        d.pages[0].image = Some(PathBuf::from("/tmp/page.png"));
        let ex = CommandExtractor::new("echo", vec!["ocr".into(), "{image}".into()]);
        let (pages, warnings) = extract_text(&d, &ex);
        assert!(warnings.is_empty());
        assert_eq!(pages[0].text.trim(), "ocr /tmp/page.png");
    }

    #[test]
    fn command_extractor_without_image_warns() {
        let ex = CommandExtractor::new("echo", vec![]);
        let (pages, warnings) = extract_text(&doc(&["x"]), &ex);
        assert_eq!(pages[0].text, "");
        assert_eq!(warnings.len(), 1);
    }
}
