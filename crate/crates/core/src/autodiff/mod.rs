//! Dense `f64` tensors with define-by-run reverse-mode differentiation.
//!
//! Operations are methods on [`Var`]; each returns a new variable recorded on
//! the same [`Tape`]. Broadcasting is never implicit: scalar-times-tensor goes
//! through [`Var::mul_scalar`], and row/column broadcasts through
//! [`Var::expand`].

mod check;
mod tape;
mod tensor;

pub use check::{grad_check, grad_check_with_inputs};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::{atanh_ratio, tanh_ratio};
pub(crate) use tensor::gemm;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape {
        shape: Vec<usize>,
        reason: &'static str,
    },
    #[error("{op}: {detail}")]
    Domain {
        op: &'static str,
        detail: &'static str,
    },
    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("function returned a non-finite value ({value})")]
    NonFinite { value: f64 },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
}
