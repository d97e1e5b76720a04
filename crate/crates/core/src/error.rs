//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CdmError {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch { expected: usize, got: usize, context: &'static str },

    #[error("index {index} out of range (len {len}) in {context}")]
    IndexOutOfRange { index: usize, len: usize, context: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid robot config: {0}")]
    InvalidConfig(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("dataset header corrupt: {0}")]
    CorruptHeader(String),

    #[error("dataset version mismatch: file has {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("dataset truncated: {0}")]
    TruncatedRecord(String),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CdmError>;
