use thiserror::Error;

/// Errors surfaced by the calibration toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("kernel matrix is not positive definite after nugget escalation")]
    CholeskyFailure,

    #[error("covariance matrix is not positive definite after jitter escalation")]
    NotPositiveDefinite,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid bounds: lower must be strictly below upper")]
    InvalidBounds,

    #[error("degenerate data: all simulation outputs are identical")]
    DegenerateData,

    #[error("history is empty")]
    EmptyHistory,

    #[error("candidate set is empty")]
    EmptyCandidates,

    #[error("IMSE is only supported for one-dimensional output, got d = {0}")]
    UnsupportedDimension(usize),

    #[error("all optimization starts failed: {0}")]
    OptimFailure(String),

    #[error("parameter {0:?} is outside the problem bounds")]
    OutOfBounds(Vec<f64>),

    #[error("unknown problem {0:?}")]
    UnknownProblem(String),

    #[error("simulator failure: {0}")]
    SimulatorFailure(String),

    #[error("simulator timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("simulator exited with nonzero status: {0}")]
    NonzeroExit(String),

    #[error("worker pool is closed")]
    PoolClosed,

    #[error("deadlock: waiting for completions with no jobs outstanding")]
    Deadlock,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
