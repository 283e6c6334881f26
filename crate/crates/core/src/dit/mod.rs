//! The toy diffusion transformer: patch embedding, sequence assembly with
//! reference isolation, RoPE-rotated full attention with timestep
//! modulation, and cross-attention map extraction.

mod cam;
mod config;
mod model;
mod params;
mod patch;
mod sampler;
mod sequence;

pub use cam::{cam_from_logits, heatmap, normalize_cam, AttentionMapStack, CamAccumulator};
pub use config::ModelConfig;
pub use model::{CamPlan, DitModel, ForwardOutput, ParamVars};
pub use params::{BlockParams, ParamLayout};
pub use patch::{patchify, unpatchify};
pub use sampler::{latent_to_image, sample_euler, SampleOutput, DEFAULT_SAMPLER_STEPS};
pub use sequence::{
    build_sequence, PositionMode, ReferenceCondition, ReferenceTokens, Segment, SegmentKind, TokenSequence,
};
