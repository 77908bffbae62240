use thiserror::Error;

/// Errors shared across the bridge-simulation toolkit.
#[derive(Error, Debug, Clone)]
pub enum BridgeError {
    #[error("state {state:?} violates the domain (lower bounds {lower:?})")]
    Domain { state: Vec<f64>, lower: Vec<f64> },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("invalid time argument: {0}")]
    Time(String),

    #[error("h underflowed the floor at t={t}, y={y:?} (log_h={log_h})")]
    HFloor { t: f64, y: Vec<f64>, log_h: f64 },

    #[error("numerical failure: {0}")]
    Numerics(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("integral diverges or fails to converge under refinement: {0}")]
    Integrability(String),

    #[error("boundary test inconclusive; partial integrals: {partials:?}")]
    Inconclusive { partials: Vec<f64> },

    #[error("covariance matrix is singular or not positive definite")]
    SingularCov,

    #[error("sample size {n} too small (need at least {min})")]
    SampleSize { n: usize, min: usize },

    #[error("ensemble failure rate {failed}/{total} exceeds the tolerated fraction")]
    Ensemble { failed: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, BridgeError>;

impl BridgeError {
    pub fn numerics(msg: impl Into<String>) -> Self {
        BridgeError::Numerics(msg.into())
    }

    pub fn param(msg: impl Into<String>) -> Self {
        BridgeError::Param(msg.into())
    }
}
