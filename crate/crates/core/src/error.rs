use thiserror::Error;

/// Errors raised anywhere in the observer toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite entry in {what}")]
    NonFinite { what: String },

    #[error("matrix is not symmetric: asymmetry {asymmetry:e} exceeds tolerance {tolerance:e}")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("eigensolver did not converge within {iterations} iterations")]
    EigenNoConvergence { iterations: usize },

    #[error("matrix is singular to working precision (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("unknown nonlinearity `{name}`; available: {available}")]
    UnknownNonlinearity { name: String, available: String },

    #[error("unknown signal `{name}`; available: {available}")]
    UnknownSignal { name: String, available: String },

    #[error("invalid parameters for `{name}`: {reason}")]
    InvalidParams { name: String, reason: String },

    #[error("no multiplier family registered for `{name}`; supply a custom basis in the config")]
    NoMultiplierFamily { name: String },

    #[error("fixed-point iteration for {what} did not converge after {iterations} iterations (residual {residual:e})")]
    FixedPoint {
        what: String,
        iterations: usize,
        residual: f64,
    },

    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("invalid option: {0}")]
    InvalidOption(String),

    #[error("semidefinite backend failure: {0}")]
    Backend(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("solver inconclusive: {0}")]
    Inconclusive(String),

    #[error("design conditions violated: {}", .0.join("; "))]
    ConditionsViolated(Vec<String>),

    #[error("certificate audit failed: {0}")]
    AuditFailed(String),

    #[error("certified bound violated: {0}")]
    BoundViolation(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
