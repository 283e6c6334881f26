use serde::{Deserialize, Serialize};

use crate::dit::{ModelConfig, PositionMode, DEFAULT_SAMPLER_STEPS};
use crate::error::{Error, Result};
use crate::layout::DEFAULT_IOU_THRESHOLD;
use crate::losses::DEFAULT_LAMBDA_MASK;
use crate::numerics::AdamWConfig;
use crate::synthetic::{DetectorConfig, SceneConfig};

/// How diffusion times are drawn during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeSampling {
    #[default]
    Uniform,
    /// `sigmoid(N(0, 1))`, which favours mid-range times.
    LogitNormal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Steps on single-subject scenes.
    pub steps_single: u64,
    /// Steps on multi-subject scenes that follow.
    pub steps_multi: u64,
    /// Replaces both step counts with 6000 and 3000.
    pub paper_budget: bool,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lambda_mask: f64,
    pub use_regional_rope: bool,
    pub use_masked_loss: bool,
    /// Temporal coordinate of the generated frame. Also scales the
    /// appearance jitter of training targets.
    pub t_target: usize,
    /// Model initialization, batch order, diffusion times and noise.
    pub seed: u64,
    /// Scene seeds; shared by every run that should see the same data.
    pub data_seed: u64,
    pub single_scenes: usize,
    pub multi_scenes: usize,
    /// Inclusive subject-count range of the multi-subject phase.
    pub multi_subjects: (usize, usize),
    pub time_sampling: TimeSampling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamWConfig::default();
        TrainConfig {
            steps_single: 2000,
            steps_multi: 1000,
            paper_budget: false,
            batch_size: 8,
            lr: 2e-4,
            weight_decay: adam.weight_decay,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            lambda_mask: DEFAULT_LAMBDA_MASK,
            use_regional_rope: true,
            use_masked_loss: true,
            t_target: 3,
            seed: 0,
            data_seed: 0,
            single_scenes: 1000,
            multi_scenes: 1000,
            multi_subjects: (2, 3),
            time_sampling: TimeSampling::Uniform,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps() == 0 {
            return Err(Error::invalid("training needs at least one step"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid(format!("lr {} must be positive", self.lr)));
        }
        if !(self.lambda_mask.is_finite() && self.lambda_mask >= 0.0) {
            return Err(Error::invalid(format!(
                "lambda_mask {} must be non-negative",
                self.lambda_mask
            )));
        }
        if self.t_target == 0 {
            return Err(Error::invalid("t_target must be at least 1"));
        }
        if self.steps_single > 0 && self.single_scenes == 0 || self.steps_multi > 0 && self.multi_scenes == 0 {
            return Err(Error::invalid("a training phase has steps but no scenes"));
        }
        let (lo, hi) = self.multi_subjects;
        if lo < 1 || hi < lo {
            return Err(Error::invalid(format!("bad multi_subjects range {lo}..={hi}")));
        }
        self.adamw().validate()
    }

    pub fn steps(&self) -> (u64, u64) {
        if self.paper_budget {
            (6000, 3000)
        } else {
            (self.steps_single, self.steps_multi)
        }
    }

    pub fn total_steps(&self) -> u64 {
        let (a, b) = self.steps();
        a + b
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Weight of the masked condition term in the gradient.
    pub fn effective_lambda(&self) -> f64 {
        if self.use_masked_loss {
            self.lambda_mask
        } else {
            0.0
        }
    }

    pub fn position_mode(&self) -> PositionMode {
        if self.use_regional_rope {
            PositionMode::Regional
        } else {
            PositionMode::Default
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub scenes: usize,
    pub subjects: usize,
    pub sampler_steps: usize,
    pub iou_threshold: f64,
    /// Seeds the initial sampling noise of every scene.
    pub noise_seed: u64,
    pub detector: DetectorConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            scenes: 48,
            subjects: 3,
            sampler_steps: DEFAULT_SAMPLER_STEPS,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            noise_seed: 0,
            detector: DetectorConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scenes == 0 || self.sampler_steps == 0 || !(1..=4).contains(&self.subjects) {
            return Err(Error::invalid(format!("unusable evaluation settings {self:?}")));
        }
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(Error::invalid(format!(
                "iou_threshold {} outside [0, 1]",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

/// Everything that determines a training run and its evaluation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub scene: SceneConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    /// Copies `train.t_target` into the model, which is the only place the
    /// temporal coordinate is read from.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.model.t_target = c.train.t_target;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.resolved();
        r.model.validate()?;
        r.train.validate()?;
        r.scene.validate()?;
        r.eval.validate()?;
        let (h, w) = r.model.canvas();
        if (r.scene.height, r.scene.width) != (h, w) {
            return Err(Error::invalid(format!(
                "scene canvas {}x{} differs from the model canvas {h}x{w}",
                r.scene.width, r.scene.height
            )));
        }
        if r.scene.box_sides.iter().any(|s| s % r.model.patch_size != 0) {
            return Err(Error::invalid(format!(
                "box sides {:?} must be multiples of patch_size {}",
                r.scene.box_sides, r.model.patch_size
            )));
        }
        let (_, hi) = r.train.multi_subjects;
        if hi.max(r.eval.subjects) > r.model.max_references {
            return Err(Error::invalid("scenes can hold more subjects than max_references"));
        }
        Ok(())
    }
}
