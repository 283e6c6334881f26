//! Procedural paired data: reference glyphs, composed target scenes with
//! their placement boxes, and a color-blob detector used as an evaluation
//! oracle.

mod dataset;
mod detect;
mod scene;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Rgb;

pub(crate) use dataset::splitmix64;
pub use dataset::{scene_seed, Dataset, DatasetSpec, ManifestRecord, Split};
pub use detect::{count_match_score, detect_subjects, DetectorConfig};
pub use scene::{gen_scene, PairedSample, PixelBox, SceneConfig, SceneSpec, Subject, MAX_SUBJECTS};

/// Subject colors. Every pair differs by at least 80 in some channel, and
/// chroma stays at or below 120 so hue jitter moves channels only a little.
pub const PALETTE: [Rgb; 7] = [
    [200, 80, 80],
    [80, 190, 80],
    [70, 90, 190],
    [200, 190, 80],
    [190, 80, 190],
    [80, 180, 190],
    [60, 60, 60],
];

pub const BACKGROUND: Rgb = [250, 250, 250];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Disk,
    Square,
    Triangle,
    Ring,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Disk, Shape::Square, Shape::Triangle, Shape::Ring];
}

/// Per-subject appearance drift between reference and target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub scale: f64,
    pub rotation_deg: f64,
    pub hue_deg: f64,
}

pub const MAX_SCALE_JITTER: f64 = 0.2;
pub const MAX_ROTATION_DEG: f64 = 30.0;
pub const MAX_HUE_DEG: f64 = 15.0;

impl Jitter {
    pub const NONE: Jitter = Jitter {
        scale: 1.0,
        rotation_deg: 0.0,
        hue_deg: 0.0,
    };

    /// Jitter from unit draws `u ∈ [-1, 1]³` at the given strength.
    pub fn from_unit(u: [f64; 3], strength: f64) -> Self {
        Jitter {
            scale: 1.0 + u[0] * MAX_SCALE_JITTER * strength,
            rotation_deg: u[1] * MAX_ROTATION_DEG * strength,
            hue_deg: u[2] * MAX_HUE_DEG * strength,
        }
    }

    pub fn is_none(&self) -> bool {
        *self == Jitter::NONE
    }

    /// Mean of the three components, each normalized by its full range.
    pub fn magnitude(&self) -> f64 {
        ((self.scale - 1.0).abs() / MAX_SCALE_JITTER
            + self.rotation_deg.abs() / MAX_ROTATION_DEG
            + self.hue_deg.abs() / MAX_HUE_DEG)
            / 3.0
    }
}

/// Jitter strength for a target timestep: `min(t / full_at, 1)`.
pub fn jitter_strength(t_target: f64, full_at: f64) -> Result<f64> {
    if !(t_target >= 0.0 && full_at > 0.0) {
        return Err(Error::invalid(format!(
            "jitter strength needs t_target >= 0 and a positive scale, got {t_target} and {full_at}"
        )));
    }
    Ok((t_target / full_at).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_is_separated() {
        for (i, a) in PALETTE.iter().enumerate() {
            let far_from_bg = a.iter().zip(BACKGROUND).any(|(&x, y)| x.abs_diff(y) > 40);
            assert!(far_from_bg);
            for b in &PALETTE[i + 1..] {
                let d = a.iter().zip(b).map(|(&x, &y)| x.abs_diff(y)).max().unwrap();
                assert!(d >= 80, "{a:?} vs {b:?}");
            }
            let chroma = a.iter().max().unwrap() - a.iter().min().unwrap();
            assert!(chroma <= 120);
        }
    }

    #[test]
    fn jitter_scaling() {
        assert_eq!(jitter_strength(0.0, 9.0).unwrap(), 0.0);
        assert_eq!(jitter_strength(3.0, 9.0).unwrap(), 1.0 / 3.0);
        assert_eq!(jitter_strength(20.0, 9.0).unwrap(), 1.0);
        assert!(Jitter::from_unit([0.3, -0.7, 1.0], 0.0).is_none());
        let full = Jitter::from_unit([1.0, -1.0, 1.0], 1.0);
        assert_eq!(full.magnitude(), 1.0);
        assert!((full.scale - 1.2).abs() < 1e-12);
    }
}
