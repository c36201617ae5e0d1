//! Error type shared across the crate.

use thiserror::Error;

/// Errors raised by construction, validation, and estimation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid design dimensions: {0}")]
    InvalidDims(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("block index {index} out of range for {blocks} blocks")]
    BlockIndexOutOfRange { index: usize, blocks: usize },

    #[error("treatment index ({row_level}, {col_level}) out of range for a {rows}x{cols} factorial")]
    TreatmentIndexOutOfRange {
        row_level: usize,
        col_level: usize,
        rows: usize,
        cols: usize,
    },

    #[error("invalid contrast: {0}")]
    InvalidContrast(String),

    #[error("invalid table: {0}")]
    InvalidTable(String),

    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),

    #[error("per-block assignment count {actual} exceeds the enumeration cap {cap}")]
    EnumerationCapExceeded { actual: u128, cap: u64 },

    #[error("confidence level must lie strictly between 0 and 1, got {0}")]
    InvalidLevel(f64),

    #[error("operation requires at least {required} blocks, got {actual}")]
    TooFewBlocks { required: usize, actual: usize },

    #[error("invalid estimator matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by malformed or inconsistent input rather
    /// than by the I/O layer. The CLI maps these to exit code 1 and I/O
    /// failures to exit code 2.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Json(_) | Error::Csv(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
