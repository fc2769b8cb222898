use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    DimensionMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("length mismatch in {op}: expected {expected}, got {actual}")]
    LengthMismatch {
        op: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("matrix is not symmetric (max |h_ij - h_ji| = {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },

    /// Cholesky hit a non-positive pivot. Recoverable: raise the damping.
    #[error("matrix is not positive definite (pivot {pivot} = {value:e}); increase damping")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),

    #[error("target is not one-hot: {0}")]
    NotOneHot(String),

    #[error("class index {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },

    #[error("no weight for unlabeled example {id}")]
    MissingWeight { id: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("binary reparameterization needs exactly 2 classes, model has {classes}")]
    NotBinary { classes: usize },

    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("need at least {needed} points, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("inner optimization did not converge: gradient norm {grad_norm:e} after {iterations} iterations")]
    NotConverged { grad_norm: f64, iterations: usize },

    #[error("outer iteration {outer_iter}: {source}")]
    Outer {
        outer_iter: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

impl Error {
    /// Errors the caller can fix by retrying with more damping.
    pub fn is_recoverable(&self) -> bool {
        match self {
            Error::NotPositiveDefinite { .. } => true,
            Error::Outer { source, .. } => source.is_recoverable(),
            _ => false,
        }
    }

    /// True for failures of the numerics (as opposed to bad input or usage).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotPositiveDefinite { .. }
            | Error::NonFinite(_)
            | Error::NotConverged { .. } => true,
            Error::Outer { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn at_outer(self, outer_iter: usize) -> Self {
        Error::Outer {
            outer_iter,
            source: alloc::boxed::Box::new(self),
        }
    }
}
