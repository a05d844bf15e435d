use thiserror::Error;

/// Errors surfaced by the library. Validation problems map to CLI exit
/// code 1, numerical divergence to exit code 2.
#[derive(Debug, Error)]
pub enum ArsqError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index out of range: {what} = {got}, limit {limit}")]
    IndexOutOfRange {
        what: &'static str,
        got: usize,
        limit: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("backward requires a scalar loss, got a value of length {0}")]
    NonScalarBackward(usize),

    #[error("non-finite gradient on parameter '{0}'")]
    NonFiniteGradient(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("prefix inconsistent with conditioning order: {0}")]
    PrefixMismatch(String),

    #[error("malformed dataset at line {line}: {message}")]
    MalformedDataset { line: usize, message: String },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty sample source")]
    EmptySource,

    #[error("environment stepped after termination without reset")]
    StepAfterDone,

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ArsqError>;
