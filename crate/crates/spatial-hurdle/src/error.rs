use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
///
/// Input errors carry enough position information (file, line) to point at
/// the offending record; numerical errors name the operation that failed so a
/// caller can distinguish "bad data" from "estimation did not converge".
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}: {message}")]
    FileFormat { path: PathBuf, message: String },

    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid hyperparameters: {0}")]
    Hyperparams(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("matrix not positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("Newton iteration failed: {0}")]
    Newton(String),

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wrap a CSV-crate error with the file it came from, preserving the
    /// record's line number when the parser knows it.
    pub fn from_csv(err: csv::Error, path: &std::path::Path) -> Self {
        match err.position() {
            Some(pos) => Error::Record {
                path: path.to_path_buf(),
                line: pos.line(),
                message: err.to_string(),
            },
            None => Error::FileFormat {
                path: path.to_path_buf(),
                message: err.to_string(),
            },
        }
    }
}
