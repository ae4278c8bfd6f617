use std::io;

use thiserror::Error;

/// Errors produced while reading one of the binary/text file formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("magic mismatch: expected {expected:?}, found {found:?}")]
    MagicMismatch { expected: &'static str, found: String },
    #[error("unsupported {kind} version {found:?} (this reader understands v1)")]
    UnsupportedVersion { kind: &'static str, found: String },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("position ({x:.3}, {y:.3}) is outside the elevation map")]
    OutOfBounds { x: f64, y: f64 },
    #[error("data collection failed: {0}")]
    Collection(String),
    #[error("policy produced an invalid input: {0}")]
    Policy(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("controller error: {0}")]
    Controller(String),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
