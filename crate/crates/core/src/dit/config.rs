use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rope::RopeConfig;

/// Shape of the toy diffusion transformer and its token layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub mlp_hidden: usize,
    pub patch_size: usize,
    pub channels: usize,
    /// Noise latent grid `(h, w)` in patches.
    pub noise_grid: (usize, usize),
    /// Block whose reference→noise logits feed the masked condition loss.
    pub cam_block_index: usize,
    /// Temporal rotary coordinate of the generated frame; references sit at 0.
    pub t_target: usize,
    pub max_references: usize,
    /// Size of the condition-token embedding table.
    pub vocab_size: usize,
    pub rope_base: f64,
    /// Vertical alignment used when fitting references into their boxes.
    pub align: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 1,
            n_blocks: 4,
            mlp_hidden: 128,
            patch_size: 4,
            channels: 3,
            noise_grid: (8, 8),
            cam_block_index: 1,
            t_target: 3,
            max_references: 4,
            vocab_size: 16,
            rope_base: 10_000.0,
            align: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_blocks == 0 || self.cam_block_index >= self.n_blocks {
            return bad(format!(
                "cam_block_index {} must be below n_blocks {}",
                self.cam_block_index, self.n_blocks
            ));
        }
        if self.t_target < 1 {
            return bad("t_target must be at least 1".into());
        }
        if self.patch_size == 0 || self.channels == 0 || self.mlp_hidden == 0 {
            return bad("patch_size, channels and mlp_hidden must be positive".into());
        }
        if self.noise_grid.0 == 0 || self.noise_grid.1 == 0 {
            return bad(format!("empty noise grid {:?}", self.noise_grid));
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.align) {
            return bad(format!("align {} outside [0, 1]", self.align));
        }
        self.rope()?;
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Values per patch token: `patch_size² · channels`.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn noise_tokens(&self) -> usize {
        self.noise_grid.0 * self.noise_grid.1
    }

    /// Canvas size in pixels, `(height, width)`.
    pub fn canvas(&self) -> (usize, usize) {
        (self.noise_grid.0 * self.patch_size, self.noise_grid.1 * self.patch_size)
    }

    pub fn rope(&self) -> Result<RopeConfig> {
        let mut r = RopeConfig::new(self.head_dim())?;
        r.base_frequency = self.rope_base;
        r.validate()?;
        Ok(r)
    }
}
