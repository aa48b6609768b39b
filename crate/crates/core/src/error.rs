use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum RoaError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("simulation diverged at step {step}")]
    Diverged { step: usize },

    #[error("certificate error: {0}")]
    Certificate(String),

    #[error("invariance hypotheses violated: {0}")]
    HypothesisViolated(String),

    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("solver stalled after {iterations} iterations (best objective {best_objective})")]
    SolverStall { iterations: usize, best_objective: f64 },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("empty sample pool: {0}")]
    EmptyPool(&'static str),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RoaError>;
