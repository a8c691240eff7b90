use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index {index} out of range for {what} of size {len}")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("InfoNCE needs at least two instances per batch to form negatives, got {0}")]
    NoNegatives(usize),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("image {height}x{width} too small for {kind}: both sides must be at least {min}")]
    InputTooSmall {
        kind: &'static str,
        height: usize,
        width: usize,
        min: usize,
    },

    #[error("not implemented: {0}")]
    NotImplemented(String),

    #[error("image {index}: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures while decoding a model checkpoint.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

/// Failures while reading or writing datasets.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing image file {0}")]
    MissingFile(PathBuf),
    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("{path}: expected {expected_h}x{expected_w} image, found {actual_h}x{actual_w}")]
    Shape {
        path: PathBuf,
        expected_h: usize,
        expected_w: usize,
        actual_h: usize,
        actual_w: usize,
    },
    #[error("manifest line {line}: label {label} exceeds class count {classes}")]
    LabelOverflow {
        line: usize,
        label: usize,
        classes: usize,
    },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}
