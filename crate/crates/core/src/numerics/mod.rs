//! Dense 64-bit tensor kernels, the reverse-mode tape, AdamW and the
//! finite-difference gradient checker.

mod adamw;
mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use kernels::{matmul, softmax_lastdim};
pub use tape::{Gradients, RotationTable, Tape, Var};
pub use tensor::Tensor;
