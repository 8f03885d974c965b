use thiserror::Error;

/// Errors produced by validation, sampling, and the valuation engines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("group {index} is empty")]
    EmptyGroup { index: usize },
    #[error("source `{id}` appears in more than one group")]
    OverlappingGroups { id: String },
    #[error("source `{id}` is not covered by any group")]
    UncoveredSource { id: String },
    #[error("group {index} names unknown source `{id}`")]
    UnknownSource { index: usize, id: String },
    #[error("group index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },
    #[error("enumeration would produce {count} ordered permutations, cap is {cap}")]
    EnumerationTooLarge { count: u128, cap: u128 },
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("label `{label}` is not a valid vote label (want -1 or +1)")]
    InvalidLabel { label: String },
    #[error("source `{id}` is already a member of the subset")]
    SourceInSubset { id: String },
    #[error("invalid tolerance: {reason}")]
    InvalidTolerance { reason: String },
    #[error("source `{id}` has no owning contributor")]
    UnownedSource { id: String },
    #[error("intervention fraction {fraction} outside [0, 1]")]
    FractionOutOfRange { fraction: f64 },
    #[error("dataset invalid: {reason}")]
    InvalidDataset { reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {reason}")]
    Parse { reason: String },
}

impl Error {
    /// Stable machine-readable code, used by the CLI's `ERROR <code> <detail>` lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyGroup { .. } => "EMPTY_GROUP",
            Error::OverlappingGroups { .. } => "OVERLAPPING_GROUPS",
            Error::UncoveredSource { .. } => "UNCOVERED_SOURCE",
            Error::UnknownSource { .. } => "UNKNOWN_SOURCE",
            Error::IndexOutOfRange { .. } => "INDEX_OUT_OF_RANGE",
            Error::EnumerationTooLarge { .. } => "ENUMERATION_TOO_LARGE",
            Error::DimensionMismatch { .. } => "DIMENSION_MISMATCH",
            Error::InvalidLabel { .. } => "INVALID_LABEL",
            Error::SourceInSubset { .. } => "SOURCE_IN_SUBSET",
            Error::InvalidTolerance { .. } => "INVALID_TOLERANCE",
            Error::UnownedSource { .. } => "UNOWNED_SOURCE",
            Error::FractionOutOfRange { .. } => "FRACTION_OUT_OF_RANGE",
            Error::InvalidDataset { .. } => "INVALID_DATASET",
            Error::Io(_) => "IO",
            Error::Parse { .. } => "PARSE",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
