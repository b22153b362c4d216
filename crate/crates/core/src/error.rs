use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error at line {line}: key `{key}`: {msg}")]
    Config { key: String, line: usize, msg: String },

    #[error("invalid weight: {0}")]
    InvalidWeight(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("value {value} is unreachable below the bracketing cap {cap}")]
    Unreachable { value: f64, cap: f64 },

    #[error("metric violation: rho(z1,z2) = {numerator} with vanishing denominator")]
    MetricViolation { numerator: f64 },

    #[error("degenerate seed: {0}")]
    DegenerateSeed(String),

    #[error("descent stalled after {iterations} iterations (energy {energy}, gradient {gradient})")]
    Stall {
        iterations: usize,
        energy: f64,
        gradient: f64,
    },

    #[error("local minimization converged to nonnegative energy {energy}")]
    NoNegativeMinimum { energy: f64 },

    #[error("mountain pass failed: {0}")]
    MountainPass(String),

    #[error("empty sample set")]
    EmptySample,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
