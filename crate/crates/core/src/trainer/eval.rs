use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::objective::{prepare_sample, PreparedSample};
use super::train::thread_count;
use super::{EvalConfig, ExperimentConfig};
use crate::dit::{latent_to_image, sample_euler, AttentionMapStack, DitModel};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::layout::layout_precision;
use crate::losses::leakage;
use crate::numerics::Tensor;
use crate::synthetic::{count_match_score, detect_subjects, splitmix64, Dataset, DatasetSpec, PairedSample, Split};

/// Held-out scenes: `eval.scenes` scenes with `eval.subjects` subjects each.
pub fn eval_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    Dataset::generate(
        &DatasetSpec {
            data_seed: cfg.train.data_seed,
            split: Split::Eval,
            count: cfg.eval.scenes,
            offset: 0,
            subjects: (cfg.eval.subjects, cfg.eval.subjects),
            t_target: cfg.train.t_target as f64,
        },
        &cfg.scene,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub scene_seed: u64,
    pub layout_precision: f64,
    pub detected: usize,
    pub expected: usize,
    /// Mean over references of the spatial mean of `ReLU(CAM - MASK)`.
    pub leakage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenes: usize,
    pub sampler_steps: usize,
    pub cam_block: usize,
    pub layout_precision: f64,
    pub count_match: f64,
    pub leakage: f64,
    pub samples: Vec<SampleMetrics>,
}

/// Layout precision and detected count of `image` against the scene's
/// placement boxes.
pub fn score_image(image: &RgbImage, sample: &PairedSample, eval: &EvalConfig) -> (f64, usize) {
    let detections = detect_subjects(image, &sample.spec.palette(), &eval.detector);
    let targets: Vec<(usize, _)> = sample.layout().into_iter().enumerate().collect();
    (
        layout_precision(&detections, &targets, eval.iou_threshold),
        detections.len(),
    )
}

/// The ideal generator: every reference pasted into its box.
pub fn copy_compositor(sample: &PairedSample) -> RgbImage {
    let mut img = RgbImage::new(sample.spec.width, sample.spec.height, sample.spec.background);
    for (r, b) in sample.references.iter().zip(&sample.spec.boxes) {
        img.paste(r, b.x, b.y);
    }
    img
}

/// A sampled image with its step-averaged, normalized attention maps.
#[derive(Clone, Debug)]
pub struct Generation {
    pub image: RgbImage,
    pub latent: Tensor<f64>,
    pub cams: AttentionMapStack<f64>,
}

/// Samples one scene from noise seeded by `noise_seed` and the scene seed.
pub fn generate(
    model: &DitModel<f64>,
    prepared: &PreparedSample,
    steps: usize,
    noise_seed: u64,
    cam_blocks: &[usize],
) -> Result<Generation> {
    let cfg = model.config();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(noise_seed ^ splitmix64(prepared.seed)));
    let init = Tensor::from_fn(&[cfg.noise_tokens(), cfg.patch_dim()], |_| {
        StandardNormal.sample(&mut rng)
    });
    let out = sample_euler(model, &prepared.seq, &init, steps, cam_blocks)?;
    Ok(Generation {
        image: latent_to_image(model, &out.latent)?,
        latent: out.latent,
        cams: out.cams,
    })
}

fn evaluate_one(model: &DitModel<f64>, cfg: &ExperimentConfig, sample: &PairedSample) -> Result<SampleMetrics> {
    let prepared = prepare_sample(sample, &cfg.model, cfg.train.position_mode())?;
    let cam_block = cfg.model.cam_block_index;
    let g = generate(
        model,
        &prepared,
        cfg.eval.sampler_steps,
        cfg.eval.noise_seed,
        &[cam_block],
    )?;
    let (precision, detected) = score_image(&g.image, sample, &cfg.eval);
    let mut leak = 0.0;
    for (r, mask) in prepared.masks.iter().enumerate() {
        let map = g
            .cams
            .get(r, cam_block)
            .ok_or_else(|| Error::Numeric(format!("no attention map for reference {r}")))?;
        leak += leakage(map, mask)?;
    }
    Ok(SampleMetrics {
        scene_seed: sample.spec.seed,
        layout_precision: precision,
        detected,
        expected: sample.spec.subjects.len(),
        leakage: leak / prepared.masks.len().max(1) as f64,
    })
}

/// Samples every scene with the deterministic Euler sampler, detects the
/// subjects and aggregates layout precision, count match and leakage.
/// `train_seeds`, when given, must not overlap the evaluation scenes.
pub fn evaluate(
    model: &DitModel<f64>,
    cfg: &ExperimentConfig,
    data: &Dataset,
    train_seeds: Option<&[u64]>,
) -> Result<EvalReport> {
    let cfg = cfg.resolved();
    if model.config() != &cfg.model {
        return Err(Error::Load("model does not match the evaluation config".into()));
    }
    if data.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    if let Some(seeds) = train_seeds {
        let train: std::collections::HashSet<u64> = seeds.iter().copied().collect();
        if let Some(s) = data.samples.iter().find(|s| train.contains(&s.spec.seed)) {
            return Err(Error::invalid(format!(
                "evaluation scene {} is also a training scene",
                s.spec.seed
            )));
        }
    }
    let run = |s: &PairedSample| evaluate_one(model, &cfg, s);
    let threads = thread_count();
    let samples: Vec<SampleMetrics> = if threads > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(|| data.samples.par_iter().map(run).collect::<Result<Vec<_>>>())?
    } else {
        data.samples.iter().map(run).collect::<Result<Vec<_>>>()?
    };
    let n = samples.len() as f64;
    let detected: Vec<usize> = samples.iter().map(|s| s.detected).collect();
    let expected: Vec<usize> = samples.iter().map(|s| s.expected).collect();
    Ok(EvalReport {
        scenes: samples.len(),
        sampler_steps: cfg.eval.sampler_steps,
        cam_block: cfg.model.cam_block_index,
        layout_precision: samples.iter().map(|s| s.layout_precision).sum::<f64>() / n,
        count_match: count_match_score(&detected, &expected)?,
        leakage: samples.iter().map(|s| s.leakage).sum::<f64>() / n,
        samples,
    })
}

/// Evaluates a checkpoint; its stored configuration must agree with `cfg`
/// on everything that shapes the model and its inputs.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, cfg: &ExperimentConfig, data: &Dataset) -> Result<EvalReport> {
    let stored = ckpt.config.resolved();
    let wanted = cfg.resolved();
    if stored.model != wanted.model
        || stored.scene != wanted.scene
        || stored.train.use_regional_rope != wanted.train.use_regional_rope
    {
        return Err(Error::Load(
            "checkpoint was trained with a different model, scene or position configuration".into(),
        ));
    }
    let model = DitModel::from_params(stored.model.clone(), ckpt.params.clone())?;
    evaluate(&model, &wanted, data, None)
}

/// Runs the evaluation path on the copy compositor's images instead of
/// sampled ones. Returns `(layout_precision, count_match)`.
pub fn copy_compositor_scores(cfg: &ExperimentConfig, data: &Dataset) -> Result<(f64, f64)> {
    let mut precision = 0.0;
    let mut detected = Vec::with_capacity(data.len());
    let mut expected = Vec::with_capacity(data.len());
    for s in &data.samples {
        let (p, d) = score_image(&copy_compositor(s), s, &cfg.eval);
        precision += p;
        detected.push(d);
        expected.push(s.spec.subjects.len());
    }
    Ok((
        precision / data.len().max(1) as f64,
        count_match_score(&detected, &expected)?,
    ))
}
