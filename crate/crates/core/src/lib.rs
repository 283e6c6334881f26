//! Layout-conditioned diffusion-transformer testbed.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: dense tensors, a reverse-mode tape and AdamW.
//! - [`rope`]: 3-D rotary embeddings and regional coordinate remapping.
//! - [`dit`]: the toy diffusion transformer, sequence assembly with
//!   reference isolation, and cross-attention map extraction.
//! - [`losses`]: flow matching, layout masks and the masked condition loss.
//! - [`layout`]: comic page layouts, their JSON format, validity metrics and
//!   a deterministic generator.
//! - [`synthetic`]: procedural paired scenes and the color-blob detector.
//! - [`trainer`]: training, checkpoints, evaluation and ablations.
//!
//! The math modules are generic over [`Scalar`]; the aliases below fix the
//! 64-bit instantiation used for training and verification.

pub mod dit;
pub mod error;
pub mod image;
pub mod layout;
pub mod losses;
pub mod numerics;
pub mod rope;
pub mod scalar;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = numerics::Tensor<f64>;
pub type Tape = numerics::Tape<f64>;
pub type RopeCoords = rope::RopeCoords<f64>;
