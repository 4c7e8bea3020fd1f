//! Minimal dense-tensor math with reverse-mode automatic differentiation.
//!
//! Values are row-major `f64`. A [`Tape`] records one forward computation and
//! runs one reverse pass; trainable values live in a [`ParamStore`] and enter
//! a tape by reference.

mod error;
mod kernels;
mod tensor;

pub mod checkpoint;
pub mod gradcheck;
pub mod param;
pub mod tape;

pub use checkpoint::Checkpoint;
pub use error::{Result, TensorError};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{conv_out_len, Gradients, Tape, Var};
pub use tensor::Tensor;
