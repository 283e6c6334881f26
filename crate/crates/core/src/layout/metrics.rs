use serde::{Deserialize, Serialize};

use super::{LayoutBox, LayoutThresholds, PageLayout, ReadingDirection};
use crate::error::{Error, Result};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Area of the union of panel boxes, by coordinate compression: the
/// distinct edges cut the page into cells, and each covered cell counts once.
pub fn coverage_ratio(page: &PageLayout) -> f64 {
    union_area(page.panels.iter().map(|p| &p.panel_box))
}

fn union_area<'a>(boxes: impl Iterator<Item = &'a LayoutBox>) -> f64 {
    let boxes: Vec<&LayoutBox> = boxes.collect();
    let mut xs: Vec<f64> = boxes.iter().flat_map(|b| [b.x0, b.x1]).collect();
    let mut ys: Vec<f64> = boxes.iter().flat_map(|b| [b.y0, b.y1]).collect();
    for v in [&mut xs, &mut ys] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    let mut area = 0.0;
    for xw in xs.windows(2) {
        let xm = 0.5 * (xw[0] + xw[1]);
        let mut covered_h = 0.0;
        for yw in ys.windows(2) {
            let ym = 0.5 * (yw[0] + yw[1]);
            if boxes.iter().any(|b| b.x0 <= xm && xm < b.x1 && b.y0 <= ym && ym < b.y1) {
                covered_h += yw[1] - yw[0];
            }
        }
        area += covered_h * (xw[1] - xw[0]);
    }
    area
}

/// Coverage estimated on an `n × n` grid of pixel centers.
pub fn raster_coverage(page: &PageLayout, n: usize) -> f64 {
    let mut hit = 0usize;
    for yi in 0..n {
        let y = (yi as f64 + 0.5) / n as f64;
        for xi in 0..n {
            let x = (xi as f64 + 0.5) / n as f64;
            if page
                .panels
                .iter()
                .any(|p| p.panel_box.x0 <= x && x < p.panel_box.x1 && p.panel_box.y0 <= y && y < p.panel_box.y1)
            {
                hit += 1;
            }
        }
    }
    hit as f64 / (n * n) as f64
}

fn vertical_overlap(a: &LayoutBox, b: &LayoutBox) -> f64 {
    (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0)
}

/// Whether the declared panel order reads rows top to bottom and, within a
/// row, in the configured horizontal direction.
pub fn page_reads_in_order(page: &PageLayout, th: &LayoutThresholds) -> bool {
    let mut rows: Vec<Vec<&LayoutBox>> = Vec::new();
    for p in &page.panels {
        let b = &p.panel_box;
        let joins = rows
            .last()
            .and_then(|r| r.last())
            .is_some_and(|prev| vertical_overlap(prev, b) >= th.row_overlap * prev.height().min(b.height()));
        if joins {
            rows.last_mut().expect("row exists").push(b);
        } else {
            rows.push(vec![b]);
        }
    }
    let tops: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().map(|b| b.y0).fold(f64::INFINITY, f64::min))
        .collect();
    if tops.windows(2).any(|w| w[1] < w[0]) {
        return false;
    }
    rows.iter().all(|r| {
        r.windows(2).all(|w| {
            let (a, b) = (w[0].center().0, w[1].center().0);
            match th.reading {
                ReadingDirection::RightToLeft => b < a,
                ReadingDirection::LeftToRight => b > a,
            }
        })
    })
}

fn percentage(hits: usize, total: usize) -> f64 {
    if total == 0 {
        100.0
    } else {
        100.0 * hits as f64 / total as f64
    }
}

pub fn panel_ordering_score(pages: &[PageLayout], th: &LayoutThresholds) -> f64 {
    percentage(pages.iter().filter(|p| page_reads_in_order(p, th)).count(), pages.len())
}

pub fn panel_count_score(pages: &[PageLayout], expected: &[usize]) -> Result<f64> {
    if pages.len() != expected.len() {
        return Err(Error::invalid(format!(
            "{} pages but {} expected panel counts",
            pages.len(),
            expected.len()
        )));
    }
    let hits = pages.iter().zip(expected).filter(|(p, &e)| p.panels.len() == e).count();
    Ok(percentage(hits, pages.len()))
}

/// Per-panel exact matches over every expected panel; a missing panel is a
/// miss and extra panels are ignored.
pub fn character_count_score(pages: &[PageLayout], expected: &[Vec<usize>]) -> Result<f64> {
    if pages.len() != expected.len() {
        return Err(Error::invalid(format!(
            "{} pages but {} expected character lists",
            pages.len(),
            expected.len()
        )));
    }
    let mut hits = 0;
    let mut total = 0;
    for (page, exp) in pages.iter().zip(expected) {
        for (k, &e) in exp.iter().enumerate() {
            total += 1;
            if page.panels.get(k).is_some_and(|p| p.characters.len() == e) {
                hits += 1;
            }
        }
    }
    Ok(percentage(hits, total))
}

/// Share of character boxes that sit inside their panel and cover a
/// reasonable fraction of it. A page set without characters scores 100.
pub fn valid_character_score(pages: &[PageLayout], th: &LayoutThresholds) -> f64 {
    let mut hits = 0;
    let mut total = 0;
    for p in pages.iter().flat_map(|pg| &pg.panels) {
        for c in &p.characters {
            total += 1;
            let ratio = c.bbox.area() / p.panel_box.area();
            if c.bbox.containment_in(&p.panel_box) >= th.containment
                && (th.min_area_ratio..=th.max_area_ratio).contains(&ratio)
            {
                hits += 1;
            }
        }
    }
    percentage(hits, total)
}

/// Share of targets with a same-id detection at IoU ≥ `iou_threshold`.
/// An empty target list scores 100.
pub fn layout_precision<Id: PartialEq>(
    detections: &[(Id, LayoutBox)],
    targets: &[(Id, LayoutBox)],
    iou_threshold: f64,
) -> f64 {
    let hits = targets
        .iter()
        .filter(|(id, t)| detections.iter().any(|(d, b)| d == id && b.iou(t) >= iou_threshold))
        .count();
    percentage(hits, targets.len())
}

/// The five page-level validity metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutScores {
    pub panel_count: f64,
    pub character_count: f64,
    pub panel_ordering: f64,
    pub valid_character: f64,
    pub coverage_ratio: f64,
}

impl LayoutScores {
    /// Scores `pages` against the per-panel character counts of their
    /// scripts; `coverage_ratio` is the mean over pages.
    pub fn compute(pages: &[PageLayout], scripts: &[Vec<usize>], th: &LayoutThresholds) -> Result<Self> {
        let counts: Vec<usize> = scripts.iter().map(Vec::len).collect();
        let coverage = if pages.is_empty() {
            0.0
        } else {
            pages.iter().map(coverage_ratio).sum::<f64>() / pages.len() as f64
        };
        Ok(LayoutScores {
            panel_count: panel_count_score(pages, &counts)?,
            character_count: character_count_score(pages, scripts)?,
            panel_ordering: panel_ordering_score(pages, th),
            valid_character: valid_character_score(pages, th),
            coverage_ratio: coverage,
        })
    }
}
