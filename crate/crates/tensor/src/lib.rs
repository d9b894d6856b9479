//! Dense NCHW tensors with tape-free reverse-mode autodiff.
//!
//! Every op returns a new immutable [`Tensor`]; when recording is enabled and
//! an input requires a gradient, the output keeps a backward closure and its
//! inputs. [`Tensor::backward`] walks that graph once and releases it.

mod element;
mod error;
pub mod ops;
pub mod profile;
mod tensor;

pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use tensor::{grad_enabled, no_grad, NoGradGuard, Tensor};
