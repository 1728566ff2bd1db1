use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated payload: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),

    #[error("non-finite sample at index {index}")]
    NonFiniteSample { index: usize },

    #[error("unknown modality tag {0}")]
    UnknownModality(String),

    #[error("invalid text encoding: {0}")]
    Encoding(String),

    #[error("manifest row {row}, column {column}: {message}")]
    Manifest {
        row: usize,
        column: String,
        message: String,
    },

    #[error("duplicate subject id {0:?}")]
    DuplicateSubject(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("tensor schema mismatch: {0}")]
    Schema(String),

    #[error("degenerate mask: round({ratio} * {n}) = {masked} leaves nothing to mask or nothing visible")]
    DegenerateMask { n: usize, ratio: f64, masked: usize },

    #[error("degenerate embedding: pooled vector has zero norm")]
    DegenerateEmbedding,

    #[error("degenerate disease direction: centroid difference norm {norm:e}")]
    DegenerateDirection { norm: f64 },

    #[error("insufficient class: {0}")]
    InsufficientClass(String),

    #[error("unknown outcome {0:?}")]
    UnknownOutcome(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("matrix not positive definite (pivot {pivot} = {value:e}, diag range [{min_diag:e}, {max_diag:e}])")]
    NotPositiveDefinite {
        pivot: usize,
        value: f64,
        min_diag: f64,
        max_diag: f64,
    },

    #[error("collinear design: information matrix is singular")]
    Collinear,

    #[error("model did not converge")]
    NotConverged,

    #[error("non-finite loss at step {step}{}", .checkpoint.as_ref().map(|p| format!("; last good parameters at {}", p.display())).unwrap_or_default())]
    NonFiniteLoss {
        step: usize,
        checkpoint: Option<PathBuf>,
    },

    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),

    #[error("config: {0}")]
    Config(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => ErrorClass::Usage,
            Error::NotPositiveDefinite { .. }
            | Error::Collinear
            | Error::NotConverged
            | Error::NonFinite(_)
            | Error::NonFiniteLoss { .. }
            | Error::DegenerateEmbedding
            | Error::DegenerateDirection { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}
