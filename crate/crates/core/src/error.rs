use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} = {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    UnknownToken { id: usize, vocab: usize },

    #[error("class `{class}` has {count} samples, at least 2 are required")]
    InsufficientSamples { class: &'static str, count: usize },

    #[error("vector norm is zero")]
    ZeroVector,

    #[error("empty batch")]
    EmptyBatch,

    #[error("zero variance, correlation is undefined")]
    ZeroVariance,

    #[error("no samples left after excluding zero labels")]
    EmptyAfterExclusion,

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("width mismatch on line {line}: `{field}` expected width {expected}, found {found}")]
    WidthMismatch {
        line: usize,
        field: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u64, expected: u64 },

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input data or configuration).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::NotSymmetric(_)
                | Error::NonFiniteLoss(_)
                | Error::InsufficientSamples { .. }
                | Error::ZeroVector
                | Error::ZeroVariance
                | Error::EmptyAfterExclusion
        )
    }
}
