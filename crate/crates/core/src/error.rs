use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RgError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{what} is not Schur (spectral radius {radius:.6})")]
    NotSchur { what: &'static str, radius: f64 },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("matrix {what} is singular or rank deficient")]
    RankDeficient { what: &'static str },

    #[error("range(H B1) is not contained in range(H B)")]
    RangeCondition,

    #[error("set is unbounded in the requested direction")]
    Unbounded,

    #[error("set is empty: {context}")]
    EmptySet { context: String },

    #[error("operation not supported for this set representation: {0}")]
    Unsupported(&'static str),

    #[error("set {0} is not symmetric about the origin")]
    NotSymmetric(&'static str),

    #[error("linear program did not converge within {0} iterations")]
    LpIterationLimit(usize),

    #[error("Lyapunov solution residual {residual:.3e} exceeds tolerance")]
    IllConditioned { residual: f64 },

    #[error("terminal set does not contain the bounding set at index {index}")]
    TerminalVerification { index: usize },

    #[error("finite determination did not terminate for n = {n} within k_max = {k_max}")]
    DeterminationLimit { n: usize, k_max: usize },

    #[error("invariance audit found {failures} violation(s)")]
    AuditFailure { failures: usize },

    #[error("governor infeasible at step {step}")]
    GovernorInfeasible { step: usize },

    #[error("scenario error: {0}")]
    Scenario(String),
}

pub type Result<T> = std::result::Result<T, RgError>;
