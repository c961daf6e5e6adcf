//! Dense tensors and a tape for reverse-mode automatic differentiation.
//!
//! Every operation is recorded on a [`Tape`] as it executes. Calling
//! [`Tape::backward`] on a scalar node replays the tape in reverse and
//! accumulates gradients for every node that requires them. Weights are
//! ordinary graph nodes, so a convolution can consume filters that were
//! themselves computed upstream.

mod error;
mod gradcheck;
mod kernels;
mod ops;
mod tape;
mod tensor;

pub use error::EngineError;
pub use gradcheck::{grad_check, grad_check_many, relative_error};
pub use tape::{CustomOp, Gradients, NodeId, Tape, Var};
pub use tensor::{DType, Real, Tensor};

pub type Result<T> = std::result::Result<T, EngineError>;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
