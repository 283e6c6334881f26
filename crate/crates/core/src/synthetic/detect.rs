use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Rgb, RgbImage};
use crate::layout::LayoutBox;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Per-channel distance within which a pixel matches a palette color.
    pub tolerance: u8,
    /// Components smaller than this are ignored.
    pub min_pixels: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            tolerance: 40,
            min_pixels: 16,
        }
    }
}

fn matches(p: Rgb, c: Rgb, tol: u8) -> bool {
    p.iter().zip(c).all(|(&a, b)| a.abs_diff(b) <= tol)
}

/// Size and tight pixel bounds `(x0, y0, x1, y1)` (exclusive ends) of the
/// largest 4-connected component of `mask`.
fn largest_component(mask: &[bool], width: usize, height: usize) -> Option<(usize, [usize; 4])> {
    let mut seen = vec![false; mask.len()];
    let mut best: Option<(usize, [usize; 4])> = None;
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut size = 0;
        let mut bounds = [usize::MAX, usize::MAX, 0, 0];
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = (i % width, i / width);
            bounds = [
                bounds[0].min(x),
                bounds[1].min(y),
                bounds[2].max(x + 1),
                bounds[3].max(y + 1),
            ];
            let mut visit = |j: usize| {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < width {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - width);
            }
            if y + 1 < height {
                visit(i + width);
            }
        }
        // Ties keep the component found first in raster order.
        if best.is_none_or(|(s, _)| size > s) {
            best = Some((size, bounds));
        }
    }
    best
}

/// Finds each palette color's largest blob and returns its tight box in
/// normalized coordinates. Colors whose largest blob has fewer than
/// `min_pixels` pixels are left out.
pub fn detect_subjects<Id: Clone>(
    image: &RgbImage,
    palette: &[(Id, Rgb)],
    cfg: &DetectorConfig,
) -> Vec<(Id, LayoutBox)> {
    let (w, h) = (image.width(), image.height());
    let pixels: Vec<Rgb> = image.raw().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let mut out = Vec::new();
    for (id, color) in palette {
        let mask: Vec<bool> = pixels.iter().map(|&p| matches(p, *color, cfg.tolerance)).collect();
        if let Some((size, [x0, y0, x1, y1])) = largest_component(&mask, w, h) {
            if size >= cfg.min_pixels {
                out.push((
                    id.clone(),
                    LayoutBox {
                        x0: x0 as f64 / w as f64,
                        y0: y0 as f64 / h as f64,
                        x1: x1 as f64 / w as f64,
                        y1: y1 as f64 / h as f64,
                    },
                ));
            }
        }
    }
    out
}

/// `100 · mean exp(-|detected - expected| / max(expected, 1))`.
pub fn count_match_score(detected: &[usize], expected: &[usize]) -> Result<f64> {
    if detected.len() != expected.len() {
        return Err(Error::invalid(format!(
            "{} detected counts for {} expected",
            detected.len(),
            expected.len()
        )));
    }
    if expected.is_empty() {
        return Ok(100.0);
    }
    let total: f64 = detected
        .iter()
        .zip(expected)
        .map(|(&d, &e)| (-(d.abs_diff(e) as f64) / e.max(1) as f64).exp())
        .sum();
    Ok(100.0 * total / expected.len() as f64)
}
