use thiserror::Error;

use crate::optim::IterationRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("not on the manifold: worst |XᵀX - I| entry {worst:.3e} at ({row}, {col}), tolerance {tol:.1e}")]
    Constraint {
        worst: f64,
        row: usize,
        col: usize,
        tol: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("representation error: {0}")]
    Representation(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("symmetry violation: {0}")]
    Symmetry(String),

    #[error("line search stagnated after {backtracks} backtracks at iteration {}", .last.iter)]
    Stagnation {
        backtracks: usize,
        last: IterationRecord,
    },

    #[error("{phase} did not converge: gradient norm {grad_norm:.3e} above tolerance {tol:.1e}")]
    NotConverged {
        phase: String,
        grad_norm: f64,
        tol: f64,
    },

    #[error("block-diagonalization stage {stage} left residual {residual:.3e} above threshold {threshold:.1e}")]
    StageFailure {
        stage: usize,
        residual: f64,
        threshold: f64,
    },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
