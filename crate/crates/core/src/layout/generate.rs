use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Character, LayoutBox, PageLayout, PanelSpec, ReadingDirection};
use crate::error::{Error, Result};

pub const MAX_PANELS: usize = 12;
pub const MAX_CHARACTERS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Space between neighbouring panels, as a fraction of the page.
    pub gutter: f64,
    /// Largest displacement of an internal edge, as a fraction of the
    /// cells it separates.
    pub edge_jitter: f64,
    /// Character box height relative to its panel.
    pub character_height: f64,
    pub reading: ReadingDirection,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            gutter: 0.02,
            edge_jitter: 0.05,
            character_height: 0.8,
            reading: ReadingDirection::RightToLeft,
        }
    }
}

/// Panels per row for `n` panels in `r` rows; upper rows take the remainder.
fn row_counts(n: usize, r: usize) -> Vec<usize> {
    (0..r).map(|i| n / r + usize::from(i < n % r)).collect()
}

/// Picks the row count whose tiling keeps panel areas even and panel shapes
/// close to square on a page of the given width/height ratio.
fn choose_rows(n: usize, aspect: f64) -> Vec<usize> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 1..=n {
        let counts = row_counts(n, r);
        let areas: Vec<f64> = counts.iter().map(|&k| 1.0 / (r * k) as f64).collect();
        let imbalance = areas.iter().cloned().fold(0.0, f64::max) / areas.iter().cloned().fold(f64::INFINITY, f64::min);
        let shape = counts
            .iter()
            .map(|&k| (aspect * r as f64 / k as f64).ln().abs())
            .sum::<f64>()
            / r as f64;
        let cost = imbalance.ln() + shape;
        if best.as_ref().is_none_or(|(c, _)| cost < *c - 1e-12) {
            best = Some((cost, counts));
        }
    }
    best.expect("at least one row count").1
}

/// Cuts `[0, 1]` into `k` cells with internal edges displaced by at most
/// `jitter` of a cell width.
fn jittered_edges(k: usize, jitter: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let cell = 1.0 / k as f64;
    let mut edges = Vec::with_capacity(k + 1);
    edges.push(0.0);
    for i in 1..k {
        let u: f64 = rng.random_range(-1.0..=1.0);
        edges.push(i as f64 * cell + u * jitter * cell);
    }
    edges.push(1.0);
    edges
}

/// Deterministic row-banded page for a script given as per-panel character
/// counts. Panels are emitted in reading order.
pub fn generate_layout(script: &[usize], aspect_ratio: f64, seed: u64, cfg: &GeneratorConfig) -> Result<PageLayout> {
    if script.is_empty() || script.len() > MAX_PANELS {
        return Err(Error::Capacity(format!(
            "{} panels requested; the generator handles 1 to {MAX_PANELS}",
            script.len()
        )));
    }
    if let Some((k, &c)) = script.iter().enumerate().find(|(_, &c)| c > MAX_CHARACTERS) {
        return Err(Error::Capacity(format!(
            "panel {k} asks for {c} characters; at most {MAX_CHARACTERS} fit"
        )));
    }
    if !(aspect_ratio.is_finite() && aspect_ratio > 0.0) {
        return Err(Error::invalid(format!("aspect ratio {aspect_ratio} must be positive")));
    }
    if !(0.0..0.2).contains(&cfg.gutter)
        || !(0.0..0.5).contains(&cfg.edge_jitter)
        || !(cfg.character_height > 0.0 && cfg.character_height <= 1.0)
    {
        return Err(Error::invalid(format!("unusable generator settings {cfg:?}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = choose_rows(script.len(), aspect_ratio);
    let row_edges = jittered_edges(rows.len(), cfg.edge_jitter, &mut rng);
    let half = 0.5 * cfg.gutter;

    let mut panels = Vec::with_capacity(script.len());
    let mut next = 0;
    for (ri, &k) in rows.iter().enumerate() {
        let col_edges = jittered_edges(k, cfg.edge_jitter, &mut rng);
        let (y0, y1) = (row_edges[ri] + half, row_edges[ri + 1] - half);
        let mut cells: Vec<(f64, f64)> = col_edges.windows(2).map(|w| (w[0] + half, w[1] - half)).collect();
        if cfg.reading == ReadingDirection::RightToLeft {
            cells.reverse();
        }
        for (x0, x1) in cells {
            let panel_box = LayoutBox::new(x0, y0, x1, y1)?;
            let count = script[next];
            let cw = panel_box.width() / count.max(1) as f64;
            let top = y1 - cfg.character_height * panel_box.height();
            let characters = (0..count)
                .map(|j| {
                    let slot = match cfg.reading {
                        ReadingDirection::RightToLeft => count - 1 - j,
                        ReadingDirection::LeftToRight => j,
                    };
                    let cx0 = x0 + slot as f64 * cw;
                    let cx1 = if slot + 1 == count { x1 } else { cx0 + cw };
                    Ok(Character {
                        id: format!("p{next}c{j}"),
                        bbox: LayoutBox::new(cx0, top, cx1, y1)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            panels.push(PanelSpec {
                panel_box,
                characters,
                caption: format!("panel {}", next + 1),
            });
            next += 1;
        }
    }
    Ok(PageLayout { panels, aspect_ratio })
}

/// A scripted request for the generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptCase {
    /// Character count per panel.
    pub script: Vec<usize>,
    pub aspect_ratio: f64,
    pub seed: u64,
}

/// Deterministic sweep over panel counts 1 to 8, character counts 0 to
/// [`MAX_CHARACTERS`] and three page shapes, one seed per case.
pub fn script_lattice(count: usize) -> Vec<ScriptCase> {
    const ASPECTS: [f64; 3] = [0.7, 1.0, 1.4];
    (0..count)
        .map(|k| {
            let panels = 1 + k % 8;
            ScriptCase {
                script: (0..panels).map(|j| (k / 8 + j) % (MAX_CHARACTERS + 1)).collect(),
                aspect_ratio: ASPECTS[(k / 8) % ASPECTS.len()],
                seed: k as u64,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::{
        coverage_ratio, panel_ordering_score, serialize_layout, valid_character_score, LayoutThresholds,
    };
    use super::*;

    #[test]
    fn single_panel_fills_page() {
        let p = generate_layout(&[0], 0.7, 1, &GeneratorConfig::default()).unwrap();
        assert_eq!(p.panels.len(), 1);
        assert!(coverage_ratio(&p) >= 0.96);
    }

    #[test]
    fn four_panels_read_in_order() {
        let th = LayoutThresholds::default();
        for seed in 0..20 {
            let p = generate_layout(&[2, 1, 0, 3], 0.7, seed, &GeneratorConfig::default()).unwrap();
            p.validate(&th).unwrap();
            assert_eq!(panel_ordering_score(&[p.clone()], &th), 100.0);
            assert_eq!(valid_character_score(&[p.clone()], &th), 100.0);
            assert_eq!(
                p.panels.iter().map(|q| q.characters.len()).collect::<Vec<_>>(),
                [2, 1, 0, 3]
            );
        }
    }

    #[test]
    fn left_to_right_mode() {
        let cfg = GeneratorConfig {
            reading: ReadingDirection::LeftToRight,
            ..Default::default()
        };
        let th = LayoutThresholds {
            reading: ReadingDirection::LeftToRight,
            ..Default::default()
        };
        let p = generate_layout(&[1, 1, 1, 1, 1], 1.0, 3, &cfg).unwrap();
        assert_eq!(panel_ordering_score(&[p], &th), 100.0);
    }

    #[test]
    fn deterministic_bytes() {
        let cfg = GeneratorConfig::default();
        let a = serialize_layout(&generate_layout(&[1, 2, 3], 0.7, 9, &cfg).unwrap());
        let b = serialize_layout(&generate_layout(&[1, 2, 3], 0.7, 9, &cfg).unwrap());
        assert_eq!(a, b);
        let c = serialize_layout(&generate_layout(&[1, 2, 3], 0.7, 10, &cfg).unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn infeasible_requests() {
        let cfg = GeneratorConfig::default();
        assert!(matches!(generate_layout(&[], 1.0, 0, &cfg), Err(Error::Capacity(_))));
        assert!(matches!(
            generate_layout(&[0; 13], 1.0, 0, &cfg),
            Err(Error::Capacity(_))
        ));
        assert!(matches!(generate_layout(&[5], 1.0, 0, &cfg), Err(Error::Capacity(_))));
        assert!(generate_layout(&[1], 0.0, 0, &cfg).is_err());
    }
}
