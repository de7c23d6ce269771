//! Dense rank-2 tensors with a reverse-mode tape, Adam, and
//! finite-difference gradient checks.

pub mod check;
pub mod params;
pub mod suite;
pub mod tape;
pub mod tensor;

pub use check::{grad_check, grad_check_params, relative_error, CheckReport};
pub use params::{AdamConfig, Checkpoint, CheckpointError, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{ShapeError, Tensor};
