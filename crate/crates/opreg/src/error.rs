//! Crate-wide error type and exit-code mapping.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Shape-chain violation while building a network; `index` is the first
    /// offending layer.
    #[error("layer {index} ({kind}): {reason}")]
    InvalidLayer {
        index: usize,
        kind: String,
        reason: String,
    },

    #[error("{model} requires {required} data, got {actual}")]
    LayoutMismatch {
        model: String,
        required: &'static str,
        actual: &'static str,
    },

    #[error("conjugate gradient stalled: relative residual {residual:.3e} after {iterations} iterations")]
    CgDidNotConverge { residual: f64, iterations: usize },

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("training diverged at epoch {epoch}: loss {loss:.3e} exceeds 1e6 x initial {initial:.3e}")]
    Diverged {
        epoch: usize,
        loss: f64,
        initial: f64,
    },

    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        found: [u8; 4],
        expected: [u8; 4],
    },

    #[error("{path}: unsupported format version {found}, expected {expected}")]
    BadVersion {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: truncated file while reading {context}")]
    Truncated { path: PathBuf, context: String },

    #[error("{path}: integrity error: {reason}")]
    Integrity { path: PathBuf, reason: String },

    #[error("{path}:{line}: {reason}")]
    ConfigParse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("checkpoint config: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// CLI exit code: 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::ConfigParse { .. } => 1,
            Error::CgDidNotConverge { .. }
            | Error::NonFiniteLoss { .. }
            | Error::Diverged { .. } => 3,
            _ => 2,
        }
    }

    /// One-word category used in machine-parseable stderr lines.
    pub fn category(&self) -> &'static str {
        match self.exit_code() {
            1 => "usage",
            3 => "numerical",
            _ => "data",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
