use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the training, audit and inference pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A user-supplied value is outside its allowed range.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Malformed input file, addressed by path and 1-based line number.
    #[error("{}:{line}: {reason}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("size guard: {what} = {actual} exceeds the cap of {cap}")]
    SizeGuard {
        what: &'static str,
        actual: usize,
        cap: usize,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:e}, tolerance {tol:e})")]
    Convergence {
        iterations: usize,
        grad_norm: f64,
        tol: f64,
    },

    #[error("artifact: {0}")]
    Artifact(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
