//! 3-D rotary position embeddings with continuous coordinates, and the
//! regional remapping that places a reference grid inside its layout box.
//!
//! Coordinates are `(t, i, j)` triples where `i` indexes width (columns) and
//! `j` indexes height (rows). Each head vector is split into three
//! consecutive chunks, one per axis, ordered `[t | h | w]`; the `h` chunk
//! rotates with `j` and the `w` chunk with `i`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RotationTable, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RopeConfig {
    pub head_dim: usize,
    /// Sub-dimensions for the `(t, h, w)` axes.
    pub axis_split: (usize, usize, usize),
    pub base_frequency: f64,
}

impl RopeConfig {
    /// Default split `(d_t, d_h, d_w)` with `d_h = d_w = 2·⌊3·head_dim/16⌋`
    /// and the remainder on the temporal axis.
    pub fn new(head_dim: usize) -> Result<Self> {
        let spatial = 2 * (3 * head_dim / 16);
        let cfg = RopeConfig {
            head_dim,
            axis_split: (head_dim.saturating_sub(2 * spatial), spatial, spatial),
            base_frequency: 10_000.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let (dt, dh, dw) = self.axis_split;
        if [dt, dh, dw].iter().any(|&d| d == 0 || d % 2 != 0) {
            return Err(Error::invalid(format!(
                "rope axis split {:?} must be positive and even",
                self.axis_split
            )));
        }
        if dt + dh + dw != self.head_dim {
            return Err(Error::invalid(format!(
                "rope axis split {:?} does not sum to head_dim {}",
                self.axis_split, self.head_dim
            )));
        }
        if !(self.base_frequency.is_finite() && self.base_frequency > 0.0) {
            return Err(Error::invalid(format!(
                "rope base frequency {} must be positive",
                self.base_frequency
            )));
        }
        Ok(())
    }

    /// Per-pair inverse frequencies for every pair of a head vector, each
    /// tagged with the coordinate axis it reads (0 = t, 1 = i, 2 = j).
    fn pair_frequencies(&self) -> Vec<(usize, f64)> {
        let (dt, dh, dw) = self.axis_split;
        let mut out = Vec::with_capacity(self.head_dim / 2);
        // (sub-dimension, coordinate index): the h chunk reads j, the w chunk reads i.
        for (d, axis) in [(dt, 0), (dh, 2), (dw, 1)] {
            for k in 0..d / 2 {
                let theta = self.base_frequency.powf(-2.0 * k as f64 / d as f64);
                out.push((axis, theta));
            }
        }
        out
    }
}

/// Axis-aligned layout region in latent-grid units plus vertical alignment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionBox {
    pub w_start: f64,
    pub h_start: f64,
    pub w_end: f64,
    pub h_end: f64,
    /// 0 aligns the fitted grid to the top of the box, 0.5 centers it.
    pub align: f64,
}

impl RegionBox {
    pub fn new(w_start: f64, h_start: f64, w_end: f64, h_end: f64, align: f64) -> Result<Self> {
        let b = RegionBox {
            w_start,
            h_start,
            w_end,
            h_end,
            align,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.w_start, self.h_start, self.w_end, self.h_end, self.align];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite region box {self:?}")));
        }
        if self.w_start >= self.w_end || self.h_start >= self.h_end {
            return Err(Error::invalid(format!(
                "degenerate region box [{}, {}, {}, {}]",
                self.w_start, self.h_start, self.w_end, self.h_end
            )));
        }
        if !(0.0..=1.0).contains(&self.align) {
            return Err(Error::invalid(format!(
                "region alignment {} outside [0, 1]",
                self.align
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.w_end - self.w_start
    }

    pub fn height(&self) -> f64 {
        self.h_end - self.h_start
    }

    /// True when the box lies inside `[0, w] × [0, h]`.
    pub fn within_grid(&self, grid: (usize, usize)) -> bool {
        let (h, w) = grid;
        self.w_start >= 0.0 && self.h_start >= 0.0 && self.w_end <= w as f64 && self.h_end <= h as f64
    }
}

/// Where a `h_i × w_i` grid lands inside a [`RegionBox`]: the aspect-
/// preserving scale and the fitted extent `[w_start, w_start + width) ×
/// [h_start, h_start + height)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionPlacement {
    pub scale: f64,
    pub w_start: f64,
    pub h_start: f64,
    pub width: f64,
    pub height: f64,
}

pub fn fit_region(grid: (usize, usize), region: &RegionBox) -> Result<RegionPlacement> {
    region.validate()?;
    let (h, w) = grid;
    if h == 0 || w == 0 {
        return Err(Error::invalid(format!("empty reference grid {grid:?}")));
    }
    let (wb, hb) = (region.width(), region.height());
    let scale = (wb / w as f64).min(hb / h as f64);
    let width = scale * w as f64;
    let height = scale * h as f64;
    Ok(RegionPlacement {
        scale,
        w_start: region.w_start + (wb - width) / 2.0,
        h_start: region.h_start + region.align * (hb - height),
        width,
        height,
    })
}

/// Per-token `(t, i, j)` rotary coordinates, row-major over the grid the
/// tokens came from.
#[derive(Clone, Debug, PartialEq)]
pub struct RopeCoords<T> {
    coords: Vec<[T; 3]>,
    grid: (usize, usize),
}

impl<T: Scalar> RopeCoords<T> {
    pub fn from_triples(coords: Vec<[T; 3]>, grid: (usize, usize)) -> Result<Self> {
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite rope coordinate"));
        }
        Ok(RopeCoords { coords, grid })
    }

    /// `n` tokens at the origin; rotation by these coordinates is the
    /// identity.
    pub fn origin(n: usize) -> Self {
        RopeCoords {
            coords: vec![[T::zero(); 3]; n],
            grid: (1, n),
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn triples(&self) -> &[[T; 3]] {
        &self.coords
    }

    /// Concatenates segments in order. The result reports a `1 × len` grid.
    pub fn concat(parts: &[&RopeCoords<T>]) -> Self {
        let coords: Vec<[T; 3]> = parts.iter().flat_map(|p| p.coords.iter().copied()).collect();
        let n = coords.len();
        RopeCoords { coords, grid: (1, n) }
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        RopeCoords {
            coords: perm.iter().map(|&p| self.coords[p]).collect(),
            grid: (1, perm.len()),
        }
    }

    pub fn shifted(&self, offset: [T; 3]) -> Self {
        RopeCoords {
            coords: self
                .coords
                .iter()
                .map(|c| [c[0] + offset[0], c[1] + offset[1], c[2] + offset[2]])
                .collect(),
            grid: self.grid,
        }
    }
}

/// Integer lattice: the token at row `j`, column `i` gets
/// `(temporal_index, i, j)`.
pub fn default_coords<T: Scalar>(grid: (usize, usize), temporal_index: usize) -> RopeCoords<T> {
    let (h, w) = grid;
    let t = T::lit(temporal_index as f64);
    let mut coords = Vec::with_capacity(h * w);
    for j in 0..h {
        for i in 0..w {
            coords.push([t, T::lit(i as f64), T::lit(j as f64)]);
        }
    }
    RopeCoords { coords, grid }
}

/// Maps a reference grid into `region`: pixel `(i, j)` goes to
/// `(0, w'_start + (W'/w)·i, h'_start + (H'/h)·j)` where `W' × H'` is the
/// grid scaled by `min(W_box/w, H_box/h)`, centered horizontally and placed
/// vertically by the region's alignment.
pub fn regional_coords<T: Scalar>(grid: (usize, usize), region: &RegionBox) -> Result<RopeCoords<T>> {
    let p = fit_region(grid, region)?;
    let (h, w) = grid;
    let step_i = p.width / w as f64;
    let step_j = p.height / h as f64;
    let mut coords = Vec::with_capacity(h * w);
    for j in 0..h {
        for i in 0..w {
            coords.push([
                T::zero(),
                T::lit(p.w_start + step_i * i as f64),
                T::lit(p.h_start + step_j * j as f64),
            ]);
        }
    }
    Ok(RopeCoords { coords, grid })
}

/// cos/sin tables for rotating `coords.len()` head vectors.
pub fn rotation_table<T: Scalar>(coords: &RopeCoords<T>, cfg: &RopeConfig) -> Result<RotationTable<T>> {
    cfg.validate()?;
    let freqs = cfg.pair_frequencies();
    let pairs = freqs.len();
    let mut cos = Vec::with_capacity(coords.len() * pairs);
    let mut sin = Vec::with_capacity(coords.len() * pairs);
    for c in &coords.coords {
        for &(axis, theta) in &freqs {
            let angle = c[axis] * T::lit(theta);
            cos.push(angle.cos());
            sin.push(angle.sin());
        }
    }
    Ok(RotationTable {
        tokens: coords.len(),
        pairs,
        cos,
        sin,
    })
}

pub fn shared_rotation_table<T: Scalar>(coords: &RopeCoords<T>, cfg: &RopeConfig) -> Result<Arc<RotationTable<T>>> {
    rotation_table(coords, cfg).map(Arc::new)
}

/// Rotates each row of `qk` (`tokens × head_dim`) by its coordinates.
pub fn rotate<T: Scalar>(qk: &Tensor<T>, coords: &RopeCoords<T>, cfg: &RopeConfig) -> Result<Tensor<T>> {
    if qk.cols() != cfg.head_dim {
        return Err(Error::dim(format!(
            "rotate: head_dim {} but rows have {} entries",
            cfg.head_dim,
            qk.cols()
        )));
    }
    if qk.rows() != coords.len() {
        return Err(Error::dim(format!(
            "rotate: {} rows but {} coordinates",
            qk.rows(),
            coords.len()
        )));
    }
    let table = rotation_table(coords, cfg)?;
    let mut out = qk.clone();
    let p = table.pairs;
    for (t, row) in out.data_mut().chunks_mut(2 * p).enumerate() {
        for k in 0..p {
            let (c, s) = (table.cos[t * p + k], table.sin[t * p + k]);
            let (a, b) = (row[2 * k], row[2 * k + 1]);
            row[2 * k] = a * c - b * s;
            row[2 * k + 1] = a * s + b * c;
        }
    }
    Ok(out)
}
