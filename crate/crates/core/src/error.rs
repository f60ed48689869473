use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("insufficient classes: {what} has {available}, need {required}")]
    InsufficientClasses {
        what: String,
        available: usize,
        required: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("statistics: {0}")]
    Statistics(String),

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("config validation error: field `{field}`: {message}")]
    ConfigValidation { field: String, message: String },

    #[error("checkpoint version mismatch: file has {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt checkpoint {path}: {message}")]
    CorruptCheckpoint { path: PathBuf, message: String },

    #[error("empty result set for `{0}`")]
    EmptyRecords(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Short category used for CLI exit messages.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } | Error::LabelOutOfRange { .. } | Error::NonScalarLoss(_) => {
                "numerics"
            }
            Error::NonFinite(_) => "divergence",
            Error::InsufficientClasses { .. } | Error::InvalidArgument(_) => "argument",
            Error::Statistics(_) => "statistics",
            Error::ConfigParse { .. } | Error::ConfigValidation { .. } => "config",
            Error::VersionMismatch { .. } | Error::CorruptCheckpoint { .. } => "checkpoint",
            Error::EmptyRecords(_) | Error::Csv(_) => "output",
            Error::Io { .. } => "io",
        }
    }
}
