use serde::{Deserialize, Serialize};

use super::patch::patchify;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::numerics::Tensor;
use crate::rope::{default_coords, regional_coords, RegionBox, RopeCoords};
use crate::scalar::Scalar;

/// How reference tokens get their rotary coordinates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionMode {
    /// Each reference is remapped into its target box.
    #[default]
    Regional,
    /// Every reference starts at the origin of its own integer lattice.
    Default,
}

/// A subject reference: its pixels, where it should appear, and its
/// identity token.
#[derive(Clone, Debug)]
pub struct ReferenceCondition<T> {
    /// `H × W × C` pixels scaled to `[-1, 1]`.
    pub image: Tensor<T>,
    /// Target box in noise-latent units.
    pub target_box: RegionBox,
    pub identity_token_id: usize,
}

impl<T: Scalar> ReferenceCondition<T> {
    pub fn from_rgb(image: &RgbImage, target_box: RegionBox, identity_token_id: usize) -> Self {
        ReferenceCondition {
            image: image.to_tensor(),
            target_box,
            identity_token_id,
        }
    }

    /// Latent grid `(h_i, w_i)` after patching.
    pub fn latent_grid(&self, patch: usize) -> Result<(usize, usize)> {
        let s = self.image.shape();
        if s.len() != 3 || patch == 0 || s[0] % patch != 0 || s[1] % patch != 0 {
            return Err(Error::dim(format!(
                "reference image {s:?} is not divisible into {patch}x{patch} patches"
            )));
        }
        Ok((s[0] / patch, s[1] / patch))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentKind {
    Condition,
    Reference(usize),
    Noise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Patched reference tokens ready for embedding.
#[derive(Clone, Debug)]
pub struct ReferenceTokens<T> {
    /// `h_i·w_i × patch_dim`.
    pub patches: Tensor<T>,
    pub grid: (usize, usize),
    pub target_box: RegionBox,
    pub identity_token_id: usize,
}

/// `[condition | ref_1 … ref_n | noise]` with per-token coordinates and the
/// query×key visibility matrix.
#[derive(Clone, Debug)]
pub struct TokenSequence<T> {
    pub condition_ids: Vec<usize>,
    pub references: Vec<ReferenceTokens<T>>,
    pub noise_grid: (usize, usize),
    pub segments: Vec<Segment>,
    pub coords: RopeCoords<T>,
    /// Row-major `len × len`; `visibility[q * len + k]` says whether query
    /// token `q` may attend to key token `k`.
    pub visibility: Vec<bool>,
}

impl<T: Scalar> TokenSequence<T> {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn segment(&self, kind: SegmentKind) -> Option<Segment> {
        self.segments.iter().copied().find(|s| s.kind == kind)
    }

    pub fn noise_segment(&self) -> Segment {
        self.segment(SegmentKind::Noise)
            .expect("every sequence has a noise segment")
    }

    pub fn reference_segment(&self, r: usize) -> Result<Segment> {
        self.segment(SegmentKind::Reference(r))
            .ok_or_else(|| Error::invalid(format!("sequence has no reference {r}")))
    }

    pub fn blocked_pairs(&self) -> usize {
        self.visibility.iter().filter(|&&v| !v).count()
    }

    /// `None` when nothing is blocked, which lets attention skip masking.
    pub fn mask(&self) -> Option<&[bool]> {
        if self.visibility.iter().all(|&v| v) {
            None
        } else {
            Some(&self.visibility)
        }
    }
}

/// Assembles the token sequence. Noise tokens sit on the integer lattice at
/// temporal index `t_target`; references sit at temporal index 0 with either
/// regional or default spatial coordinates. Only reference↔reference pairs
/// of different references are hidden from each other.
pub fn build_sequence<T: Scalar>(
    refs: &[ReferenceCondition<T>],
    condition_ids: &[usize],
    cfg: &ModelConfig,
    mode: PositionMode,
) -> Result<TokenSequence<T>> {
    let noise_grid = cfg.noise_grid;
    if refs.len() > cfg.max_references {
        return Err(Error::Capacity(format!(
            "{} references exceed the maximum of {}",
            refs.len(),
            cfg.max_references
        )));
    }
    if let Some(&bad) = condition_ids.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(Error::invalid(format!(
            "condition id {bad} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    let mut references = Vec::with_capacity(refs.len());
    for (k, r) in refs.iter().enumerate() {
        let b = r.target_box;
        b.validate()?;
        if !b.within_grid(noise_grid) {
            return Err(Error::invalid(format!(
                "reference {k} box [{}, {}, {}, {}] lies outside the {}x{} noise grid",
                b.w_start, b.h_start, b.w_end, b.h_end, noise_grid.0, noise_grid.1
            )));
        }
        if r.identity_token_id >= cfg.vocab_size {
            return Err(Error::invalid(format!(
                "reference {k} identity {} outside vocabulary of {}",
                r.identity_token_id, cfg.vocab_size
            )));
        }
        let (patches, grid) = patchify(&r.image, cfg.patch_size)?;
        if patches.cols() != cfg.patch_dim() {
            return Err(Error::dim(format!(
                "reference {k} has {} channels, model expects {}",
                r.image.shape()[2],
                cfg.channels
            )));
        }
        references.push(ReferenceTokens {
            patches,
            grid,
            target_box: b,
            identity_token_id: r.identity_token_id,
        });
    }

    let mut segments = Vec::new();
    let mut parts: Vec<RopeCoords<T>> = Vec::new();
    let mut at = 0;
    if !condition_ids.is_empty() {
        segments.push(Segment {
            kind: SegmentKind::Condition,
            start: 0,
            len: condition_ids.len(),
        });
        parts.push(RopeCoords::origin(condition_ids.len()));
        at += condition_ids.len();
    }
    for (k, r) in references.iter().enumerate() {
        let c = match mode {
            PositionMode::Regional => {
                let mut b = r.target_box;
                b.align = cfg.align;
                regional_coords(r.grid, &b)?
            }
            PositionMode::Default => default_coords(r.grid, 0),
        };
        segments.push(Segment {
            kind: SegmentKind::Reference(k),
            start: at,
            len: c.len(),
        });
        at += c.len();
        parts.push(c);
    }
    segments.push(Segment {
        kind: SegmentKind::Noise,
        start: at,
        len: noise_grid.0 * noise_grid.1,
    });
    parts.push(default_coords(noise_grid, cfg.t_target));
    let coords = RopeCoords::concat(&parts.iter().collect::<Vec<_>>());

    let n = coords.len();
    let mut owner = vec![None; n];
    for s in &segments {
        if let SegmentKind::Reference(k) = s.kind {
            owner[s.range()].iter_mut().for_each(|o| *o = Some(k));
        }
    }
    let mut visibility = vec![true; n * n];
    for q in 0..n {
        for k in 0..n {
            if let (Some(a), Some(b)) = (owner[q], owner[k]) {
                if a != b {
                    visibility[q * n + k] = false;
                }
            }
        }
    }

    Ok(TokenSequence {
        condition_ids: condition_ids.to_vec(),
        references,
        noise_grid,
        segments,
        coords,
        visibility,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            noise_grid: (4, 4),
            patch_size: 2,
            ..Default::default()
        }
    }

    fn reference(px: usize, b: [f64; 4]) -> ReferenceCondition<f64> {
        ReferenceCondition {
            image: Tensor::zeros(&[px, px, 3]),
            target_box: RegionBox::new(b[0], b[1], b[2], b[3], 0.5).unwrap(),
            identity_token_id: 1,
        }
    }

    #[test]
    fn visibility_counts() {
        let c = cfg();
        let s = build_sequence::<f64>(&[], &[0], &c, PositionMode::Regional).unwrap();
        assert_eq!(s.blocked_pairs(), 0);
        assert!(s.mask().is_none());

        let one = [reference(4, [0.0, 0.0, 2.0, 2.0])];
        let s = build_sequence(&one, &[0], &c, PositionMode::Regional).unwrap();
        assert_eq!(s.blocked_pairs(), 0);

        let two = [reference(4, [0.0, 0.0, 2.0, 2.0]), reference(4, [2.0, 2.0, 4.0, 4.0])];
        let s = build_sequence(&two, &[], &c, PositionMode::Regional).unwrap();
        assert_eq!(s.len(), 4 + 4 + 16);
        assert_eq!(s.blocked_pairs(), 32);
        let (r0, r1) = (s.reference_segment(0).unwrap(), s.reference_segment(1).unwrap());
        let n = s.len();
        for q in 0..n {
            for k in 0..n {
                let cross = (r0.range().contains(&q) && r1.range().contains(&k))
                    || (r1.range().contains(&q) && r0.range().contains(&k));
                assert_eq!(s.visibility[q * n + k], !cross);
            }
        }
    }

    #[test]
    fn coordinates_per_segment() {
        let c = cfg();
        let refs = [reference(4, [2.0, 0.0, 4.0, 2.0])];
        let s = build_sequence(&refs, &[3, 4], &c, PositionMode::Regional).unwrap();
        let t = s.coords.triples();
        assert_eq!(&t[0..2], &[[0.0; 3], [0.0; 3]]);
        assert_eq!(
            &t[2..6],
            &[[0.0, 2.0, 0.0], [0.0, 3.0, 0.0], [0.0, 2.0, 1.0], [0.0, 3.0, 1.0]]
        );
        assert_eq!(t[6], [3.0, 0.0, 0.0]);
        assert_eq!(t[6 + 15], [3.0, 3.0, 3.0]);

        let s = build_sequence(&refs, &[3, 4], &c, PositionMode::Default).unwrap();
        assert_eq!(s.coords.triples()[5], [0.0, 1.0, 1.0]);
    }

    #[test]
    fn errors() {
        let c = cfg();
        let out = [reference(4, [3.0, 3.0, 5.0, 5.0])];
        let e = build_sequence(&out, &[], &c, PositionMode::Regional).unwrap_err();
        assert!(matches!(e, Error::Validation(_)));
        assert!(e.to_string().contains("reference 0 box [3, 3, 5, 5]"), "{e}");

        let many: Vec<_> = (0..5).map(|_| reference(4, [0.0, 0.0, 2.0, 2.0])).collect();
        assert!(matches!(
            build_sequence(&many, &[], &c, PositionMode::Regional),
            Err(Error::Capacity(_))
        ));
        assert!(build_sequence::<f64>(&[], &[99], &c, PositionMode::Regional).is_err());
    }
}
