use thiserror::Error;

pub type Result<T> = std::result::Result<T, CovRegError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CovRegError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("need at least {required} observations, got {got}")]
    TooFewObservations { required: usize, got: usize },

    #[error("covariate column {column} has zero variance")]
    ZeroVarianceCovariate { column: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("direction row {row} infeasible after {attempts} relaxations (last mu = {mu})")]
    InfeasibleDirection { row: usize, attempts: usize, mu: f64 },

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("covariance not positive semi-definite: {0}")]
    NotPsd(String),

    #[error("replicate {replicate}: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<CovRegError>,
    },
}
