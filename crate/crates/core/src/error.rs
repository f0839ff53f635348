use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced anywhere in the evaluation / calibration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    /// Malformed text (wrong field count, unparsable number).
    #[error("{}:{line}:{column}: parse error: {message}", source_name.as_deref().unwrap_or("<input>"))]
    Parse {
        source_name: Option<String>,
        line: usize,
        column: usize,
        message: String,
    },

    /// Well-formed text whose values violate a domain bound.
    #[error("{}:{line}:{column}: validation error: {message}", source_name.as_deref().unwrap_or("<input>"))]
    Validation {
        source_name: Option<String>,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("model file: {0}")]
    Model(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("insufficient data: {class} class has {have} samples, need at least {need}")]
    InsufficientData {
        class: &'static str,
        have: usize,
        need: usize,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("not enough input: {0}")]
    EmptyInput(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("invalid spec: {0}")]
    Spec(String),

    #[error("image {}: {message}", path.display())]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a file name to a parse/validation error that was produced from raw text.
    pub fn with_source_name(self, name: impl Into<String>) -> Self {
        match self {
            Error::Parse {
                line,
                column,
                message,
                ..
            } => Error::Parse {
                source_name: Some(name.into()),
                line,
                column,
                message,
            },
            Error::Validation {
                line,
                column,
                message,
                ..
            } => Error::Validation {
                source_name: Some(name.into()),
                line,
                column,
                message,
            },
            other => other,
        }
    }

    /// True for errors caused by bad numerics rather than bad input data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_))
    }
}
