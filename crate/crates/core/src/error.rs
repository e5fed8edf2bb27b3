use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: String, right: String },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("dimension {dim} is not divisible by {divisor}")]
    NotDivisible { dim: usize, divisor: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unknown wavelet `{0}` (expected \"haar\" or \"db2\")")]
    UnknownWavelet(String),

    #[error("non-finite loss {loss} at iteration {iteration}")]
    Diverged { iteration: usize, loss: f64 },

    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("unsupported format version {found} (expected {expected})")]
    BadVersion { expected: u32, found: u32 },

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
