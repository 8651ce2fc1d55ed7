use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("probability table has non-positive entry {value} at state {state}")]
    NonPositiveEntry { state: usize, value: f64 },

    #[error("table length {0} is not a power of two")]
    BadLength(usize),

    #[error("coordinates reconstruct a non-positive probability {value} at state {state}")]
    NonPositiveReconstruction { state: usize, value: f64 },

    #[error("natural parameters overflow the representable range")]
    Overflow,

    #[error("order {l} is outside 1..={n}")]
    BadOrder { l: usize, n: usize },

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("coordinates are not realizable on the open simplex: {0}")]
    NonRealizable(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("sub-block is numerically singular (condition estimate {condition:e})")]
    SingularSubblock { condition: f64 },

    #[error("{n} variables exceeds the exact-enumeration cap of {cap}")]
    CapExceeded { n: usize, cap: usize },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
