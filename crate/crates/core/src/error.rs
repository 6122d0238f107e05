use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: &'static str },

    #[error("non-finite value produced at layer {layer} ({op})")]
    NonFinite { layer: usize, op: &'static str },

    #[error("{path}: bad magic number 0x{found:08x} at offset {offset} (expected 0x{expected:08x})")]
    BadMagic {
        path: PathBuf,
        offset: u64,
        expected: u32,
        found: u32,
    },

    #[error("{path}: expected {expected} bytes, found {actual}")]
    FileSize { path: PathBuf, expected: u64, actual: u64 },

    #[error("{what}: {images} images but {labels} labels")]
    CountMismatch { what: String, images: usize, labels: usize },

    #[error("{path}: label {label} at record {record} is out of range [0, 10)")]
    BadLabel { path: PathBuf, record: usize, label: u8 },

    #[error("batch size {batch_size} exceeds dataset size {len}")]
    BatchTooLarge { batch_size: usize, len: usize },

    #[error("unknown {kind} `{name}`; valid names: {}", valid.join(", "))]
    UnknownName {
        kind: &'static str,
        name: String,
        valid: Vec<&'static str>,
    },

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },

    #[error("unsupported format version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at iteration {iteration}: {source}")]
    Diverged {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
