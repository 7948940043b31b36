use std::path::PathBuf;

use thiserror::Error;

use crate::data::ClassId;

pub type Result<T, E = DcenError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DcenError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file; `location` is `file:line` or `file:record`.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("unknown class id {0}")]
    UnknownClass(ClassId),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at step {step}: {dump}")]
    NonFinite { step: u64, dump: String },
}

impl DcenError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DcenError::Io { path: path.into(), source }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        DcenError::Parse { location: location.into(), message: message.into() }
    }

    /// Short stable tag used as the machine-parsable prefix of CLI errors
    /// and mapped onto FFI status codes.
    pub fn kind(&self) -> &'static str {
        match self {
            DcenError::Io { .. } => "io",
            DcenError::Parse { .. } => "parse",
            DcenError::DimensionMismatch(_) => "dimension",
            DcenError::Config(_) => "config",
            DcenError::InvalidArgument(_) => "argument",
            DcenError::Validation(_) => "validation",
            DcenError::UnknownClass(_) => "unknown-class",
            DcenError::EmptySplit(_) => "empty-split",
            DcenError::Checkpoint(_) => "checkpoint",
            DcenError::NonFinite { .. } => "non-finite",
        }
    }
}
