use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EioError {
    #[error("spectrum must be nonincreasing (entry {index}: {prev} < {next})")]
    NonmonotoneSpectrum { index: usize, prev: f64, next: f64 },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("eigenvector matrix is not orthogonal (max |V^T V - I| = {deviation:e})")]
    NonorthogonalEigvecs { deviation: f64 },

    #[error("design kind mismatch: expected {expected}, got {got}")]
    KindMismatch {
        expected: &'static str,
        got: &'static str,
    },

    #[error("operation requires a finite mu")]
    InfiniteMu,

    #[error("linear system is singular or ill-conditioned ({context})")]
    SingularSystem { context: &'static str },

    #[error("theta_circ must be nonzero")]
    ZeroTheta,

    #[error("tau^2 must equal 2*lambda (tau = {tau}, lambda = {lambda})")]
    TauLambdaMismatch { tau: f64, lambda: f64 },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

impl EioError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        EioError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, EioError>;
