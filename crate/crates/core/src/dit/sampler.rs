use super::cam::{AttentionMapStack, CamAccumulator};
use super::model::DitModel;
use super::patch::unpatchify;
use super::sequence::TokenSequence;
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const DEFAULT_SAMPLER_STEPS: usize = 20;

#[derive(Clone, Debug)]
pub struct SampleOutput<T> {
    /// Final latent, `noise_tokens × patch_dim`, at diffusion time 0.
    pub latent: Tensor<T>,
    /// Maps averaged over every sampling step, then normalized.
    pub cams: AttentionMapStack<T>,
}

/// Deterministic Euler integration of the learned velocity from `t = 1`
/// (pure noise) to `t = 0` in `steps` uniform steps:
/// `z ← z - (1/steps) · v(z, t)`.
pub fn sample_euler<T: Scalar>(
    model: &DitModel<T>,
    seq: &TokenSequence<T>,
    init_noise: &Tensor<T>,
    steps: usize,
    cam_blocks: &[usize],
) -> Result<SampleOutput<T>> {
    if steps == 0 {
        return Err(Error::invalid("sampler needs at least one step"));
    }
    let mut z = init_noise.clone().with_requires_grad(false);
    let dt = T::one() / T::lit(steps as f64);
    let mut acc = CamAccumulator::new(cam_blocks);
    for k in 0..steps {
        let t = T::one() - T::lit(k as f64) * dt;
        let (v, cams) = model.predict(seq, t, &z, cam_blocks)?;
        if !cam_blocks.is_empty() && !seq.references.is_empty() {
            acc.add(&cams)?;
        }
        for (zi, &vi) in z.data_mut().iter_mut().zip(v.data()) {
            *zi -= dt * vi;
        }
    }
    Ok(SampleOutput {
        latent: z,
        cams: acc.finish(seq.noise_grid)?,
    })
}

/// Converts a `noise_tokens × patch_dim` latent back to pixels.
pub fn latent_to_image<T: Scalar>(model: &DitModel<T>, latent: &Tensor<T>) -> Result<RgbImage> {
    let cfg = model.config();
    let img = unpatchify(latent, cfg.noise_grid, cfg.patch_size, cfg.channels)?;
    RgbImage::from_tensor(&img)
}
