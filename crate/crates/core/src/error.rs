use thiserror::Error;

use crate::data::PoseKind;

/// Validation failure for a single subject record.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("dimension mismatch: pose {pose} has {got} entries, expected {expected}")]
    DimensionMismatch {
        pose: PoseKind,
        expected: usize,
        got: usize,
    },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

impl RecordError {
    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        RecordError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Name of the offending field (pose name for dimension errors).
    pub fn field(&self) -> String {
        match self {
            RecordError::DimensionMismatch { pose, .. } => format!("poses.{pose}"),
            RecordError::Invalid { field, .. } => field.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed record at line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("dimension mismatch at line {line}: {source}")]
    DimensionMismatch { line: usize, source: RecordError },

    #[error("invalid record at line {line}: {source}")]
    InvalidRecord { line: usize, source: RecordError },

    #[error("duplicate subject id {id:?} at line {line}")]
    DuplicateId { line: usize, id: String },

    #[error("no values for target {0}")]
    NoTargetValues(String),

    #[error("too few values for target {target}: {count} (need at least 2)")]
    TooFewTargetValues { target: String, count: usize },

    #[error("zero variance for target {0}")]
    ZeroVariance(String),

    #[error("unknown target {0:?}")]
    UnknownTarget(String),

    #[error("subject {0:?} has no poses")]
    EmptyGraph(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("zero-norm vector under cosine distance")]
    ZeroNorm,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
