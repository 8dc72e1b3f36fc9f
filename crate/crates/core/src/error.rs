use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the completion library.
#[derive(Error, Debug)]
pub enum Error {
    #[error("index {index} out of range 0..{bound}")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error("digit {position} has value {value}, expected < {radix}")]
    DigitOutOfRange {
        position: usize,
        value: usize,
        radix: usize,
    },

    #[error("expected {expected} digits, got {got}")]
    ArityMismatch { expected: usize, got: usize },

    #[error("invalid factor {factor}: valid factors are 1..={max}")]
    InvalidFactor { factor: usize, max: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dense size guard exceeded: {n}x{n} matrix exceeds {limit} entries")]
    SizeGuard { n: usize, limit: usize },

    #[error("zero denominator in relative error: observed entries have zero norm")]
    ZeroDenominator,

    #[error("duplicate observed pair ({row}, {col})")]
    DuplicatePair { row: usize, col: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("requested {requested} samples but only {available} pairs are available")]
    TooManySamples { requested: usize, available: usize },

    #[error("non-finite value while processing group {group} of factor {factor}")]
    NonFinite { factor: usize, group: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
