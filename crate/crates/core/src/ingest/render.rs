use std::fs;
use std::path::Path;

use image::{GrayImage, Luma};
use thiserror::Error;

use super::source::SourcePage;

pub const DEFAULT_DPI: u32 = 144;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("page {page_no}: {source}")]
    Image {
        page_no: u32,
        #[source]
        source: image::ImageError,
    },
    #[error("page {page_no}: {source}")]
    Io {
        page_no: u32,
        #[source]
        source: std::io::Error,
    },
    #[error("page {page_no} has nothing to render")]
    NothingToRender { page_no: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderedImage {
    pub width: u32,
    pub height: u32,
}

/// Produces one lossless raster per page.
pub trait PageRenderer: Send + Sync {
    fn dpi(&self) -> u32;

    /// Writes the page image to `out` as PNG.
    fn render(&self, page: &SourcePage, out: &Path) -> Result<RenderedImage, RenderError>;

    fn supports_concurrency(&self) -> bool {
        true
    }
}

/// Pixel size of a physical page at `dpi`.
pub fn page_pixels(size_pt: (f64, f64), dpi: u32) -> (u32, u32) {
    let scale = dpi as f64 / 72.0;
    (
        (size_pt.0 * scale).round().max(1.0) as u32,
        (size_pt.1 * scale).round().max(1.0) as u32,
    )
}

/// Re-encodes existing page images losslessly; pages that only have a text
/// layer are rasterized as a greeked layout (one dark box per glyph, 10pt
/// monospace grid, one-inch margins), which keeps line structure and text
/// density visible without a font engine.
#[derive(Debug, Clone, Copy)]
pub struct RasterRenderer {
    pub dpi: u32,
}

impl Default for RasterRenderer {
    fn default() -> Self {
        Self { dpi: DEFAULT_DPI }
    }
}

const MARGIN_PT: f64 = 72.0;
const ADVANCE_PT: f64 = 6.0;
const LINE_PT: f64 = 14.0;
const GLYPH_PT: f64 = 8.0;

impl RasterRenderer {
    fn greek(&self, text: &str, size_pt: (f64, f64)) -> GrayImage {
        let (w, h) = page_pixels(size_pt, self.dpi);
        let scale = self.dpi as f64 / 72.0;
        let mut img = GrayImage::from_pixel(w, h, Luma([255]));
        let cols = ((size_pt.0 - 2.0 * MARGIN_PT) / ADVANCE_PT).floor().max(1.0) as usize;
        let rows = ((size_pt.1 - 2.0 * MARGIN_PT) / LINE_PT).floor().max(1.0) as usize;

        let mut row = 0usize;
        'lines: for line in text.lines() {
            let chars: Vec<char> = line.chars().collect();
            let wrapped = if chars.is_empty() {
                vec![&chars[..]]
            } else {
                chars.chunks(cols).collect()
            };
            for segment in wrapped {
                if row >= rows {
                    break 'lines;
                }
                for (col, c) in segment.iter().enumerate() {
                    if c.is_whitespace() {
                        continue;
                    }
                    let x0 = ((MARGIN_PT + col as f64 * ADVANCE_PT) * scale) as u32;
                    let y0 = ((MARGIN_PT + row as f64 * LINE_PT) * scale) as u32;
                    let gw = ((ADVANCE_PT - 1.0) * scale).max(1.0) as u32;
                    let gh = (GLYPH_PT * scale).max(1.0) as u32;
                    // vary the ink per glyph so different text gives different pixels
                    let ink = 40 + (*c as u32 % 5) as u8 * 20;
                    for y in y0..(y0 + gh).min(h) {
                        for x in x0..(x0 + gw).min(w) {
                            img.put_pixel(x, y, Luma([ink]));
                        }
                    }
                }
                row += 1;
            }
        }
        img
    }
}

impl PageRenderer for RasterRenderer {
    fn dpi(&self) -> u32 {
        self.dpi
    }

    fn render(&self, page: &SourcePage, out: &Path) -> Result<RenderedImage, RenderError> {
        let page_no = page.page_no;
        if let Some(parent) = out.parent() {
            fs::create_dir_all(parent).map_err(|source| RenderError::Io { page_no, source })?;
        }
        let img = match (&page.image, &page.text_layer) {
            (Some(src), _) => image::open(src)
                .map_err(|source| RenderError::Image { page_no, source })?
                .to_luma8(),
            (None, Some(text)) => self.greek(text, page.size_pt),
            (None, None) => return Err(RenderError::NothingToRender { page_no }),
        };
        img.save_with_format(out, image::ImageFormat::Png)
            .map_err(|source| RenderError::Image { page_no, source })?;
        Ok(RenderedImage {
            width: img.width(),
            height: img.height(),
        })
    }
}
