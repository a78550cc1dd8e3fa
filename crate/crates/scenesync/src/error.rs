//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any scenesync operation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("validation error: {0}")]
    ValidationError(String),
    #[error("no plane model found with sufficient consensus")]
    NoModelFound,
    #[error("opening converged but fewer than 3 rim points were found")]
    DegenerateOpening,
    #[error("registration failed: {0}")]
    RegistrationFailed(String),
    #[error("too sparse: {got} points, need at least {min}")]
    TooSparse { got: usize, min: usize },
    #[error("green detection failed; per-mask counts: threshold={threshold}, dominance={dominance}, hsv={hsv}")]
    DetectionFailed {
        threshold: usize,
        dominance: usize,
        hsv: usize,
    },
    #[error("duplicate asset id: {0}")]
    DuplicateId(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("track is not in tracked status")]
    NotTracked,
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("segmentation selected no points")]
    EmptySegmentation,
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("pipeline stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps an error with the name of the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
