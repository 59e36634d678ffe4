use thiserror::Error;

use crate::dynamics::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters, dimensions or distribution settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// A mathematical precondition of the check does not hold
    /// (non-PD matrix, β ≤ 1, storage not convex, ...).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// An integrand or storage function produced a non-finite value.
    #[error("evaluation error: {message} (omega = {omega:?})")]
    Evaluation { message: String, omega: Vec<f64> },

    /// Closed-form expectation was requested for an integrand that is not a
    /// declared polynomial of degree ≤ 4 in the noise.
    #[error("closed-form expectation unavailable: {0}")]
    ClosedFormUnavailable(String),

    /// State left the overflow bound (or became non-finite) at `step`.
    #[error("trajectory diverged at step {step} (|x| = {norm:e})")]
    Divergence {
        step: usize,
        norm: f64,
        partial: Box<Trajectory>,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub(crate) fn dims(what: &str, expected: usize, got: usize) -> Self {
        Error::Config(format!("{what}: expected dimension {expected}, got {got}"))
    }
}
