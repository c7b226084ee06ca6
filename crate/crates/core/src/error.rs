use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("unknown category label {label:?} at line {line}")]
    UnknownCategory { label: String, line: usize },

    #[error("empty intersection: no word survives the vocabulary filter")]
    EmptyIntersection,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("missing key {0:?}")]
    MissingKey(String),

    #[error("layer {layer} out of range 0..={max}")]
    BadLayer { layer: usize, max: usize },

    #[error("missing subword vector for word {word:?}, split ({left:?}, {right:?})")]
    MissingSubword {
        word: String,
        left: String,
        right: String,
    },

    #[error("store validation failed: {0}")]
    Validation(String),

    #[error("label domain violation: {0}")]
    LabelDomain(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
