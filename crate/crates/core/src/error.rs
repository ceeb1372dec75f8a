use thiserror::Error;

/// Errors produced across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid hyperparameter `{name}` = {value}: must be strictly positive and finite")]
    InvalidHyperparameter { name: &'static str, value: f64 },

    #[error("Cholesky factorization failed after jitter escalation up to {jitter:e}")]
    Factorization { jitter: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("pair (A, B) is not stabilizable: {0}")]
    NotStabilizable(String),

    #[error("Riccati iteration did not converge after {0} iterations")]
    RiccatiDivergence(usize),

    #[error("function is not differentiable at the requested point: {0}")]
    NotDifferentiable(String),

    #[error("calibration target coverage {target} unreachable with gamma <= {max_gamma:e}")]
    CalibrationUnreachable { target: f64, max_gamma: f64 },

    #[error("grid too large: {nodes} nodes (limit {limit})")]
    GridTooLarge { nodes: usize, limit: usize },

    #[error("certified set is empty; safety cannot be established")]
    CertificationCollapse,

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
