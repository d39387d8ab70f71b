//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, GcdError>;

/// Errors produced by dataset construction, clustering, evaluation and
/// training.
#[derive(Debug, Error)]
pub enum GcdError {
    /// A split or generation spec is out of range or selects nothing.
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    /// Synthetic data generation could not satisfy its constraints.
    #[error("generation failed: {0}")]
    Generation(String),

    /// A feature or label file is malformed.
    #[error(transparent)]
    Format(#[from] FormatError),

    /// A cost matrix entry is NaN or infinite.
    #[error("invalid cost at ({row}, {col}): {value}")]
    InvalidCost { row: usize, col: usize, value: f64 },

    /// Mismatched or empty inputs to a metric or model.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A clustering or search configuration violates its invariants.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Ground-truth labels were requested but the dataset has none.
    #[error("evaluation unavailable: {0}")]
    EvaluationUnavailable(String),

    /// A supervised loss was requested on a batch with no labelled anchors.
    #[error("empty supervision: batch contains no labelled anchors")]
    EmptySupervision,

    /// A loss or gradient evaluation produced a non-finite value.
    #[error("numerical overflow in {0}")]
    NumericalOverflow(String),

    /// Toy training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Malformed feature/label file errors, with the offending byte or line
/// position where one exists.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic at byte 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} at byte {offset}")]
    UnsupportedVersion { found: u16, offset: usize },

    #[error("truncated payload at byte {offset}: expected {expected} more bytes, found {found}")]
    Truncated {
        offset: usize,
        expected: usize,
        found: usize,
    },

    #[error("row length mismatch at line {line}: expected {expected} values, found {found}")]
    RowLengthMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value {value:?} at {position}")]
    NonFinite { value: String, position: String },

    #[error("malformed header at line {line}: {detail}")]
    BadHeader { line: usize, detail: String },

    #[error("malformed field at line {line}: {detail}")]
    BadField { line: usize, detail: String },

    #[error("invalid value at byte {offset}: {detail}")]
    BadValue { offset: usize, detail: String },
}
