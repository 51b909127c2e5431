//! Error type shared by every module of the crate.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, MofoError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MofoError {
    #[error("block layout must contain at least one block")]
    EmptyLayout,

    #[error("duplicate block name `{0}`")]
    DuplicateBlockName(String),

    #[error("block `{0}` has zero length")]
    ZeroLengthBlock(String),

    #[error("block index {index} out of range for layout with {blocks} blocks")]
    BlockIndexOutOfRange { index: usize, blocks: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("layout mismatch between operands")]
    LayoutMismatch,

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("update fraction {0}% outside (0, 100]")]
    AlphaOutOfRange(f64),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperParams(String),

    #[error("operation requires theory mode (epsilon = 0, beta1 < sqrt(beta2) < 1)")]
    NotTheoryMode,

    #[error("zero second moment with nonzero first moment at coordinate {0}")]
    ZeroSecondMoment(usize),

    #[error("stochastic update rule requires a random number generator")]
    MissingRng,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric failure at step {step}: {reason}")]
    Numeric { step: u64, reason: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for MofoError {
    fn from(err: std::io::Error) -> Self {
        MofoError::Io(err.to_string())
    }
}
