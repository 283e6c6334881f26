use crate::dit::ParamVars;
use crate::dit::{build_sequence, patchify, DitModel, ModelConfig, PositionMode, ReferenceCondition, TokenSequence};
use crate::error::{Error, Result};
use crate::losses::{
    flow_matching_loss_on_tape, masked_condition_loss_on_tape, rasterize_mask, total_loss_on_tape, LayoutMask,
    LossWeights,
};
use crate::numerics::{Tape, Tensor, Var};
use crate::synthetic::PairedSample;

/// A scene turned into model inputs: the token sequence, the clean target
/// latent and one layout mask per reference.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub seed: u64,
    pub seq: TokenSequence<f64>,
    /// `noise_tokens × patch_dim`, pixels in `[-1, 1]`.
    pub clean: Tensor<f64>,
    pub masks: Vec<LayoutMask>,
}

pub fn prepare_sample(sample: &PairedSample, cfg: &ModelConfig, mode: PositionMode) -> Result<PreparedSample> {
    let (h, w) = cfg.canvas();
    if (sample.target.height(), sample.target.width()) != (h, w) {
        return Err(Error::dim(format!(
            "scene {} is {}x{}, the model generates {w}x{h}",
            sample.spec.seed,
            sample.target.width(),
            sample.target.height()
        )));
    }
    let boxes = sample.spec.region_boxes(cfg.patch_size, cfg.align)?;
    let refs: Vec<ReferenceCondition<f64>> = sample
        .references
        .iter()
        .zip(&boxes)
        .enumerate()
        .map(|(k, (img, b))| ReferenceCondition::from_rgb(img, *b, sample.identity_token(k)))
        .collect();
    let seq = build_sequence(&refs, &sample.condition_ids, cfg, mode)?;
    let (clean, _) = patchify(&sample.target.to_tensor::<f64>(), cfg.patch_size)?;
    let masks = boxes
        .iter()
        .map(|b| rasterize_mask(b, cfg.noise_grid))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedSample {
        seed: sample.spec.seed,
        seq,
        clean,
        masks,
    })
}

/// Loss nodes of one sample.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveVars {
    pub diff: Var,
    pub mask: Var,
    pub total: Var,
}

/// Records the training objective of one sample at diffusion time `t` with
/// noise `noise`: flow matching on `y_t = (1 - t)·y + t·ε` against
/// `ε - y`, plus `lambda` times the masked condition loss on the
/// normalized maps of block `cam_block_index`. With `lambda = 0` the mask
/// term is still recorded but `total` is the flow-matching node itself.
pub fn record_objective(
    model: &DitModel<f64>,
    tape: &mut Tape<f64>,
    pv: &ParamVars,
    sample: &PreparedSample,
    t: f64,
    noise: &Tensor<f64>,
    lambda: f64,
) -> Result<ObjectiveVars> {
    let clean = &sample.clean;
    let noisy = clean.zip_map(noise, |y, e| (1.0 - t) * y + t * e)?;
    let target = noise.zip_map(clean, |e, y| e - y)?;
    let cam_block = model.config().cam_block_index;
    let out = model.forward(tape, pv, &sample.seq, t, &noisy, &[cam_block])?;
    let diff = flow_matching_loss_on_tape(tape, out.velocity, &target)?;
    let mask = if sample.masks.is_empty() {
        tape.constant(Tensor::scalar(0.0))
    } else {
        let cams: Vec<Var> = out.cams_raw[0].iter().map(|&c| tape.minmax_normalize(c)).collect();
        masked_condition_loss_on_tape(tape, &cams, &sample.masks)?
    };
    let total = if lambda == 0.0 {
        diff
    } else {
        total_loss_on_tape(tape, diff, mask, &LossWeights { lambda_mask: lambda })?
    };
    Ok(ObjectiveVars { diff, mask, total })
}
