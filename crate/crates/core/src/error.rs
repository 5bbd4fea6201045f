use thiserror::Error;

use crate::problem::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("problem data violates {} assumption(s): {}", .0.len(), join_violations(.0))]
    InvalidProblem(Vec<Violation>),

    #[error("Newton iteration did not converge at time step {step} (residual {residual:.3e})")]
    NewtonDiverged { step: usize, residual: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolveFailure(String),

    #[error("measure sign violation: {0}")]
    SignViolation(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("line search failed after {halvings} step halvings")]
    LineSearchFailure { halvings: usize },

    #[error("penalty path stalled after {stages} stage(s): state violation {violation:.3e}")]
    PathStalled {
        stages: usize,
        violation: f64,
        best: Option<Box<crate::optimizer::KktTriplet>>,
    },

    #[error("cone sampling accepted no direction after {attempts} attempts")]
    EmptySample { attempts: usize },

    #[error("invalid option: {0}")]
    InvalidOption(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("expression error in `{source_text}`: {message}")]
    Expression { source_text: String, message: String },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}
