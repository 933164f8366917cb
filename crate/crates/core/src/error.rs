use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: dimension mismatch, expected {expected} but got {actual}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("label {0} is not 0 or 1")]
    InvalidLabel(f64),

    #[error("activation cache does not belong to this model state")]
    StaleActivations,

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated: needed {needed} bytes, only {available} available")]
    Truncated { needed: usize, available: usize },

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),

    #[error("invalid checkpoint dimension {0} (must be even and >= 2)")]
    CheckpointDim(u32),

    #[error("record {record}: inconsistent dimension, expected {expected} but got {actual}")]
    InconsistentDim {
        record: usize,
        expected: usize,
        actual: usize,
    },

    #[error("line {line}: expected {expected} fields, found {actual}")]
    Arity {
        line: usize,
        expected: usize,
        actual: usize,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty file")]
    EmptyFile,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("gradient spot-check failed: relative error {rel_err:e} exceeds {tolerance:e}")]
    GradientCheck { rel_err: f64, tolerance: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimMismatch {
            context,
            expected,
            actual,
        }
    }
}
