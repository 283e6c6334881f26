use std::collections::BTreeMap;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::numerics::{Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Raw cross-attention map of one reference: the scaled logits of its
/// query rows against the noise-token key columns, averaged over reference
/// rows and over heads. Returns a `1 × noise_tokens` node.
pub fn cam_from_logits<T: Scalar>(
    tape: &mut Tape<T>,
    head_logits: &[Var],
    reference_rows: Range<usize>,
    noise_cols: Range<usize>,
) -> Result<Var> {
    if reference_rows.is_empty() {
        return Err(Error::invalid("cross-attention map of an empty reference"));
    }
    if head_logits.is_empty() || noise_cols.is_empty() {
        return Err(Error::invalid("cross-attention map needs heads and noise tokens"));
    }
    let mut per_head = Vec::with_capacity(head_logits.len());
    for &l in head_logits {
        let rows = tape.slice_rows(l, reference_rows.start, reference_rows.len())?;
        let block = tape.slice_cols(rows, noise_cols.start, noise_cols.len())?;
        per_head.push(tape.mean_rows(block));
    }
    if per_head.len() == 1 {
        return Ok(per_head[0]);
    }
    let stacked = tape.concat_rows(&per_head)?;
    Ok(tape.mean_rows(stacked))
}

/// Min-max normalization to `[0, 1]`; a constant map becomes all zeros.
pub fn normalize_cam<T: Scalar>(raw: &Tensor<T>) -> Tensor<T> {
    let mn = raw.data().iter().copied().fold(T::infinity(), T::min);
    let mx = raw.data().iter().copied().fold(T::neg_infinity(), T::max);
    if mx > mn {
        raw.map(|v| (v - mn) / (mx - mn))
    } else {
        Tensor::zeros(raw.shape())
    }
}

/// Normalized maps keyed by `(reference, block)`, each shaped like the noise
/// grid with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMapStack<T> {
    noise_grid: (usize, usize),
    maps: BTreeMap<(usize, usize), Tensor<T>>,
}

impl<T: Scalar> AttentionMapStack<T> {
    pub fn new(noise_grid: (usize, usize)) -> Self {
        AttentionMapStack {
            noise_grid,
            maps: BTreeMap::new(),
        }
    }

    pub fn noise_grid(&self) -> (usize, usize) {
        self.noise_grid
    }

    /// Inserts a normalized map, reshaped to the noise grid.
    pub fn insert(&mut self, reference: usize, block: usize, map: Tensor<T>) -> Result<()> {
        let (h, w) = self.noise_grid;
        let map = map.reshape(vec![h, w])?;
        if map.data().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::invalid("attention map values must lie in [0, 1]"));
        }
        self.maps.insert((reference, block), map);
        Ok(())
    }

    pub fn get(&self, reference: usize, block: usize) -> Option<&Tensor<T>> {
        self.maps.get(&(reference, block))
    }

    /// Maps of every reference at one block, in reference order.
    pub fn at_block(&self, block: usize) -> Vec<&Tensor<T>> {
        self.maps
            .iter()
            .filter(|((_, b), _)| *b == block)
            .map(|(_, m)| m)
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &Tensor<T>)> {
        self.maps.iter()
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

/// Running sum of raw maps over diffusion timesteps.
#[derive(Clone, Debug)]
pub struct CamAccumulator<T> {
    blocks: Vec<usize>,
    sums: Vec<Vec<Tensor<T>>>,
    count: usize,
}

impl<T: Scalar> CamAccumulator<T> {
    pub fn new(blocks: &[usize]) -> Self {
        CamAccumulator {
            blocks: blocks.to_vec(),
            sums: Vec::new(),
            count: 0,
        }
    }

    /// Adds one timestep's raw maps, indexed `[block][reference]` in the
    /// order of the accumulator's blocks.
    pub fn add(&mut self, raw: &[Vec<Tensor<T>>]) -> Result<()> {
        if raw.len() != self.blocks.len() {
            return Err(Error::dim("raw maps do not match the requested blocks"));
        }
        if self.sums.is_empty() {
            self.sums = raw.to_vec();
        } else {
            for (acc, new) in self.sums.iter_mut().zip(raw) {
                if acc.len() != new.len() {
                    return Err(Error::dim("reference count changed between timesteps"));
                }
                for (a, n) in acc.iter_mut().zip(new) {
                    a.add_assign(n)?;
                }
            }
        }
        self.count += 1;
        Ok(())
    }

    /// Averages over the accumulated timesteps, then normalizes each map.
    pub fn finish(&self, noise_grid: (usize, usize)) -> Result<AttentionMapStack<T>> {
        let mut stack = AttentionMapStack::new(noise_grid);
        if self.count == 0 {
            return Ok(stack);
        }
        let inv = T::one() / T::lit(self.count as f64);
        for (bi, per_ref) in self.sums.iter().enumerate() {
            for (r, sum) in per_ref.iter().enumerate() {
                let mut avg = sum.clone();
                avg.scale_in_place(inv);
                stack.insert(r, self.blocks[bi], normalize_cam(&avg))?;
            }
        }
        Ok(stack)
    }
}

/// Black → red → yellow → white heat colormap of a `[0, 1]` map, one pixel
/// per cell, upscaled by `scale`.
pub fn heatmap(map: &Tensor<impl Scalar>, grid: (usize, usize), scale: usize) -> Result<RgbImage> {
    let (h, w) = grid;
    if map.len() != h * w {
        return Err(Error::dim(format!("{} cells for a {h}x{w} heatmap", map.len())));
    }
    let mut img = RgbImage::new(w, h, [0, 0, 0]);
    for j in 0..h {
        for i in 0..w {
            let v = map.data()[j * w + i].to_f64_lossy().clamp(0.0, 1.0) * 3.0;
            let ch = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put(i, j, [ch(v), ch(v - 1.0), ch(v - 2.0)]);
        }
    }
    Ok(img.upscale(scale.max(1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_built_logits_normalize_linearly() {
        let mut tape = Tape::<f64>::new();
        // One reference token (row 0) against four noise tokens (cols 1..5).
        let l = tape.constant(Tensor::from_rows(1, 5, vec![9.0, 0.0, 1.0, 2.0, 3.0]).unwrap());
        let raw = cam_from_logits(&mut tape, &[l], 0..1, 1..5).unwrap();
        let n = tape.minmax_normalize(raw);
        let got = tape.value(n).data().to_vec();
        let want = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
        assert_eq!(normalize_cam(tape.value(raw)).data(), tape.value(n).data());
    }

    #[test]
    fn constant_map_normalizes_to_zero() {
        let raw = Tensor::<f64>::full(&[1, 4], 2.5);
        assert_eq!(normalize_cam(&raw), Tensor::zeros(&[1, 4]));
    }

    #[test]
    fn heads_and_rows_are_averaged() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_rows(2, 3, vec![0.0, 1.0, 2.0, 0.0, 3.0, 4.0]).unwrap());
        let b = tape.constant(Tensor::from_rows(2, 3, vec![0.0, 0.0, 0.0, 0.0, 4.0, 0.0]).unwrap());
        let raw = cam_from_logits(&mut tape, &[a, b], 0..2, 1..3).unwrap();
        // Head a: rows mean [2, 3]; head b: [2, 0]; average [2, 1.5].
        assert_eq!(tape.value(raw).data(), &[2.0, 1.5]);
        assert!(cam_from_logits(&mut tape, &[a], 1..1, 1..3).is_err());
    }

    #[test]
    fn stack_rejects_out_of_range_values() {
        let mut s = AttentionMapStack::<f64>::new((1, 2));
        assert!(s
            .insert(0, 0, Tensor::from_rows(1, 2, vec![0.0, 1.5]).unwrap())
            .is_err());
        s.insert(0, 1, Tensor::from_rows(1, 2, vec![0.0, 1.0]).unwrap())
            .unwrap();
        assert_eq!(s.get(0, 1).unwrap().shape(), &[1, 2]);
        assert_eq!(s.at_block(1).len(), 1);
    }

    #[test]
    fn accumulator_averages_before_normalizing() {
        let mut acc = CamAccumulator::<f64>::new(&[0]);
        acc.add(&[vec![Tensor::from_rows(1, 2, vec![0.0, 2.0]).unwrap()]])
            .unwrap();
        acc.add(&[vec![Tensor::from_rows(1, 2, vec![4.0, 0.0]).unwrap()]])
            .unwrap();
        let s = acc.finish((1, 2)).unwrap();
        // Average [2, 1] normalizes to [1, 0].
        assert_eq!(s.get(0, 0).unwrap().data(), &[1.0, 0.0]);
    }
}
