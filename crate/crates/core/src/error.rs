use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
///
/// Variants are grouped so that callers (the CLI in particular) can map them
/// onto coarse failure classes: configuration, data, or numerics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("chain state has zero posterior density")]
    InvalidState,

    #[error("non-finite gradient at leapfrog step {step}")]
    Divergence { step: usize },

    #[error("image too small for feature stage {stage}: {detail}")]
    ImageTooSmall { stage: usize, detail: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("cannot ingest {}: {message}", path.display())]
    Ingest { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by numerical breakdown rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::InvalidState | Error::Divergence { .. })
    }

    /// True for failures caused by configuration values.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::InvalidConfig(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
