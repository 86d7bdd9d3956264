use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CmvError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("imaginary displacement {y} is outside the strip of width {h}")]
    StripViolation { y: f64, h: f64 },

    #[error("sup of |alpha| on the strip is certified only up to {bound}, which is not below 1")]
    SupBound { bound: f64 },

    #[error("boundary value has modulus {modulus}; a unit-modulus value is required")]
    NonUnitBoundary { modulus: f64 },

    #[error("truncation error bound {bound:e} exceeds the target {target:e}")]
    TruncationTooCoarse { bound: f64, target: f64 },

    #[error("singular: {0}")]
    Singular(String),

    #[error("eigensolver did not converge after {iterations} iterations (matrix hash {hash})")]
    NoConvergence { iterations: usize, hash: String },

    #[error("avalanche principle hypotheses violated: {0}")]
    Avalanche(String),

    #[error("hypothesis not satisfied: {0}")]
    Hypothesis(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, CmvError>;
