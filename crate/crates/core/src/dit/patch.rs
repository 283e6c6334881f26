use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Splits an `H × W × C` image into non-overlapping `p × p` patches.
///
/// Returns the `(H/p) · (W/p) × (p·p·C)` patch matrix, row-major over the
/// patch grid, each row holding its patch in `(y, x, c)` order, plus the
/// grid size `(H/p, W/p)`.
pub fn patchify<T: Scalar>(image: &Tensor<T>, patch: usize) -> Result<(Tensor<T>, (usize, usize))> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::dim(format!("patchify expects H×W×C, got {s:?}")));
    }
    let (h, w, c) = (s[0], s[1], s[2]);
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::dim(format!(
            "{h}x{w} image is not divisible into {patch}x{patch} patches"
        )));
    }
    let (gh, gw) = (h / patch, w / patch);
    let pd = patch * patch * c;
    let src = image.data();
    let mut out = Vec::with_capacity(gh * gw * pd);
    for gy in 0..gh {
        for gx in 0..gw {
            for py in 0..patch {
                let y = gy * patch + py;
                let start = (y * w + gx * patch) * c;
                out.extend_from_slice(&src[start..start + patch * c]);
            }
        }
    }
    Ok((Tensor::from_rows(gh * gw, pd, out)?, (gh, gw)))
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Scalar>(
    patches: &Tensor<T>,
    grid: (usize, usize),
    patch: usize,
    channels: usize,
) -> Result<Tensor<T>> {
    let (gh, gw) = grid;
    let pd = patch * patch * channels;
    if patches.rows() != gh * gw || patches.cols() != pd {
        return Err(Error::dim(format!(
            "unpatchify: {:?} does not match grid {grid:?} with {pd}-wide patches",
            patches.shape()
        )));
    }
    let (h, w) = (gh * patch, gw * patch);
    let mut out = vec![T::zero(); h * w * channels];
    for gy in 0..gh {
        for gx in 0..gw {
            let row = patches.row(gy * gw + gx);
            for py in 0..patch {
                let y = gy * patch + py;
                let dst = (y * w + gx * patch) * channels;
                let src = py * patch * channels;
                out[dst..dst + patch * channels].copy_from_slice(&row[src..src + patch * channels]);
            }
        }
    }
    Tensor::new(vec![h, w, channels], out)
}
