//! Crate-wide error type.

use thiserror::Error;

/// A single cell of a ground matrix that violates a construction invariant.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MatrixViolation {
    pub row: usize,
    pub col: usize,
    pub value: f64,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Off-diagonal entry is negative.
    Negative,
    /// Diagonal entry is not exactly zero.
    NonzeroDiagonal,
    /// Entry is NaN or infinite.
    NonFinite,
}

impl std::fmt::Display for MatrixViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let what = match self.kind {
            ViolationKind::Negative => "negative entry",
            ViolationKind::NonzeroDiagonal => "nonzero diagonal",
            ViolationKind::NonFinite => "non-finite entry",
        };
        write!(f, "{} {} at ({}, {})", what, self.value, self.row, self.col)
    }
}

fn join_violations(violations: &[MatrixViolation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error)]
pub enum Error {
    /// An importance grouping failed validation; the message lists the
    /// offending classes or groups.
    #[error("invalid importance grouping: {0}")]
    InvalidGrouping(String),

    /// A ground matrix failed validation; every violated cell is reported.
    #[error("invalid ground matrix: {}", join_violations(.0))]
    InvalidMatrix(Vec<MatrixViolation>),

    /// A probability histogram failed validation.
    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),

    /// Two inputs that must agree on length/shape do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A class index is outside `[0, num_classes)`.
    #[error("class index {index} out of range for {num_classes} classes")]
    ClassOutOfRange { index: usize, num_classes: usize },

    /// The exact LP oracle is limited to small instances.
    #[error("exact LP oracle supports at most {limit} bins, got {n}")]
    OracleSizeExceeded { n: usize, limit: usize },

    /// A scalar parameter is outside its valid domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// `exp(-D/epsilon)` underflows in the plain scaling domain; the caller
    /// must retry with log-domain stabilization.
    #[error(
        "sinkhorn kernel underflow: exp(-{max_cost}/{epsilon}) is below the smallest \
         normal f64; retry with log-domain stabilization"
    )]
    KernelUnderflow { epsilon: f64, max_cost: f64 },

    /// Training produced a non-finite loss or gradient.
    #[error("non-finite loss or gradient at epoch {epoch}, batch {batch}")]
    NumericalAbort { epoch: usize, batch: usize },

    /// An internal solver invariant was broken. Indicates a bug.
    #[error("internal solver error: {0}")]
    Internal(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
