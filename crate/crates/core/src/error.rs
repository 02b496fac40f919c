use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid distance matrix: {0}")]
    InvalidDistanceMatrix(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid identifier {0:?}")]
    InvalidId(String),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("within-class scatter is singular after regularization")]
    SingularScatter,
    #[error("requested dimension {requested} exceeds the bound {bound}")]
    RankTooLarge { requested: usize, bound: usize },
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("both target and non-target trials are required")]
    MissingTrialLabel,
    #[error("misaligned input: {0}")]
    Misaligned(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
