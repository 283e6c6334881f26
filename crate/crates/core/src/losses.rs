//! Flow-matching objective, layout masks and the masked condition loss.
//!
//! Each loss exists twice: a plain function over tensors, used by metrics
//! and tests, and a `*_on_tape` variant that records the same arithmetic on
//! a [`Tape`] for training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::rope::RegionBox;
use crate::scalar::Scalar;

/// Weight of the masked condition term in the combined objective.
pub const DEFAULT_LAMBDA_MASK: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_mask: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_mask: DEFAULT_LAMBDA_MASK,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_mask.is_finite() && self.lambda_mask >= 0.0) {
            return Err(Error::invalid(format!(
                "lambda_mask {} must be finite and non-negative",
                self.lambda_mask
            )));
        }
        Ok(())
    }
}

/// Binary mask over the noise latent grid, row-major, 1 inside the box.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayoutMask {
    grid: (usize, usize),
    cells: Vec<bool>,
}

impl LayoutMask {
    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn count_ones(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Mask as a `1 × (h·w)` tensor of zeros and ones.
    pub fn to_row<T: Scalar>(&self) -> Tensor<T> {
        let data = self
            .cells
            .iter()
            .map(|&c| if c { T::one() } else { T::zero() })
            .collect();
        Tensor::from_rows(1, self.cells.len(), data).expect("mask is non-empty")
    }
}

/// Latent pixel `(i, j)` is inside iff its center `(i + ½, j + ½)` lies in
/// `[w_start, w_end) × [h_start, h_end)`.
pub fn rasterize_mask(region: &RegionBox, noise_grid: (usize, usize)) -> Result<LayoutMask> {
    region.validate()?;
    let (h, w) = noise_grid;
    let mut cells = Vec::with_capacity(h * w);
    for j in 0..h {
        let cy = j as f64 + 0.5;
        for i in 0..w {
            let cx = i as f64 + 0.5;
            cells.push(cx >= region.w_start && cx < region.w_end && cy >= region.h_start && cy < region.h_end);
        }
    }
    if !cells.iter().any(|&c| c) {
        return Err(Error::invalid(format!(
            "region [{}, {}, {}, {}] covers no pixel of the {h}x{w} grid",
            region.w_start, region.h_start, region.w_end, region.h_end
        )));
    }
    Ok(LayoutMask {
        grid: noise_grid,
        cells,
    })
}

/// Mean squared error between the predicted velocity and `noise - clean`.
pub fn flow_matching_loss<T: Scalar>(v_pred: &Tensor<T>, clean: &Tensor<T>, noise: &Tensor<T>) -> Result<T> {
    v_pred.expect_same_shape(clean, "flow_matching_loss")?;
    v_pred.expect_same_shape(noise, "flow_matching_loss")?;
    let n = T::lit(v_pred.len() as f64);
    let sse: T = v_pred
        .data()
        .iter()
        .zip(clean.data().iter().zip(noise.data()))
        .map(|(&v, (&y, &e))| {
            let r = v - (e - y);
            r * r
        })
        .sum();
    Ok(sse / n)
}

/// Tape version of [`flow_matching_loss`]; `target` holds `noise - clean`.
pub fn flow_matching_loss_on_tape<T: Scalar>(tape: &mut Tape<T>, v_pred: Var, target: &Tensor<T>) -> Result<Var> {
    let tgt = tape.constant(target.clone());
    let r = tape.sub(v_pred, tgt)?;
    let sq = tape.mul(r, r)?;
    Ok(tape.mean_all(sq))
}

fn check_pairs<T: Scalar>(cams: &[Tensor<T>], masks: &[LayoutMask]) -> Result<()> {
    if cams.is_empty() || cams.len() != masks.len() {
        return Err(Error::invalid(format!(
            "masked condition loss needs one mask per map: {} maps, {} masks",
            cams.len(),
            masks.len()
        )));
    }
    for (k, (c, m)) in cams.iter().zip(masks).enumerate() {
        if c.len() != m.cells.len() {
            return Err(Error::dim(format!(
                "map {k} has {} cells, mask has {}",
                c.len(),
                m.cells.len()
            )));
        }
    }
    Ok(())
}

/// Spatial mean of `ReLU(cam - mask)` for one reference.
pub fn leakage<T: Scalar>(cam: &Tensor<T>, mask: &LayoutMask) -> Result<T> {
    check_pairs(std::slice::from_ref(cam), std::slice::from_ref(mask))?;
    let total: T = cam
        .data()
        .iter()
        .zip(&mask.cells)
        .map(|(&c, &m)| {
            let b = if m { T::one() } else { T::zero() };
            (c - b).max(T::zero())
        })
        .sum();
    Ok(total / T::lit(cam.len() as f64))
}

/// `(1/n) Σ_i mean(ReLU(CAM_i - MASK_i))` over the `n` references.
pub fn masked_condition_loss<T: Scalar>(cams: &[Tensor<T>], masks: &[LayoutMask]) -> Result<T> {
    check_pairs(cams, masks)?;
    let mut total = T::zero();
    for (c, m) in cams.iter().zip(masks) {
        total += leakage(c, m)?;
    }
    Ok(total / T::lit(cams.len() as f64))
}

/// Tape version of [`masked_condition_loss`]; `cams` are `1 × (h·w)` maps.
pub fn masked_condition_loss_on_tape<T: Scalar>(tape: &mut Tape<T>, cams: &[Var], masks: &[LayoutMask]) -> Result<Var> {
    if cams.is_empty() || cams.len() != masks.len() {
        return Err(Error::invalid(format!(
            "masked condition loss needs one mask per map: {} maps, {} masks",
            cams.len(),
            masks.len()
        )));
    }
    let mut per_ref = Vec::with_capacity(cams.len());
    for (&c, m) in cams.iter().zip(masks) {
        if tape.value(c).len() != m.cells.len() {
            return Err(Error::dim("map and mask sizes differ"));
        }
        let mv = tape.constant(m.to_row());
        let d = tape.sub(c, mv)?;
        let r = tape.relu(d);
        per_ref.push(tape.mean_all(r));
    }
    let stacked = tape.concat_cols(&per_ref)?;
    Ok(tape.mean_all(stacked))
}

/// `diff + λ·mask`.
pub fn total_loss<T: Scalar>(diff: T, mask: T, w: &LossWeights) -> T {
    diff + T::lit(w.lambda_mask) * mask
}

pub fn total_loss_on_tape<T: Scalar>(tape: &mut Tape<T>, diff: Var, mask: Var, w: &LossWeights) -> Result<Var> {
    let scaled = tape.scale(mask, T::lit(w.lambda_mask));
    tape.add(diff, scaled)
}
