//! Minimal dense tensors with tape-based reverse-mode differentiation,
//! parameter storage and the Adam optimiser.
//!
//! Precision is chosen once through the element type: `f32` for training,
//! `f64` for gradient checks.

mod adam;
mod error;
pub mod gradcheck;
mod kernels;
mod params;
mod real;
mod tape;
mod tensor;

pub use adam::{adam_update, Adam, AdamConfig, Moments};
pub use error::{Result, TensorError};
pub use kernels::ConvGeom;
pub use params::{init_tensor, Init, ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{numel, Tensor};
