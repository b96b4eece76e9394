//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records operations as they are evaluated; [`Tape::backward`]
//! sweeps it once in reverse. The raw [`kernels`] are shared with
//! gradient-free inference paths.

mod error;
mod grad_check;
pub mod kernels;
mod tape;
mod tensor;

pub use error::{AutodiffError, Result};
pub use grad_check::grad_check;
pub use kernels::AttentionSegment;
pub use tape::{dropout_mask, sigmoid, softplus, AttentionSpec, Gradients, Tape, Var};
pub use tensor::Tensor;
