//! Dense row-major tensors with a tape for reverse-mode differentiation.
//!
//! Values live on a [`Tape`]; every primitive called on a [`Var`] evaluates
//! eagerly and records a backward rule. [`Tape::backward`] replays the record
//! in reverse to produce [`Gradients`] for the leaves.
//!
//! Shapes are checked at every call. Apart from rank-0 results there is no
//! implicit broadcasting: per-channel operations are explicit
//! (`add_channel_bias`, `scale_channels`, `add_bias_last`).

pub mod check;
mod error;
pub mod linalg;
mod ops;
mod real;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use real::{gemm, DType, Real};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{inverse_permutation, Tensor};
