use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SfaError {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("quadrature did not converge: estimated error {error_estimate:e} after {subdivisions} subdivisions")]
    Quadrature {
        error_estimate: f64,
        subdivisions: usize,
    },

    #[error("design matrix is rank deficient")]
    DesignMatrix,

    #[error("information matrix is singular or not positive definite")]
    SingularInformation,

    #[error("fit did not converge: {0}")]
    NonConvergence(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, SfaError>;

impl From<std::io::Error> for SfaError {
    fn from(e: std::io::Error) -> Self {
        SfaError::Io(e.to_string())
    }
}
