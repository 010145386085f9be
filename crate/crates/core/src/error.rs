use thiserror::Error;

use crate::model::State;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("state (delta={}, b={}) is outside the grid", .0.delta, .0.battery)]
    StateOutOfRange(State),

    #[error("transmit is infeasible at (delta={}, b={}): battery is empty", .0.delta, .0.battery)]
    InfeasibleAction(State),

    #[error("relative value iteration did not converge after {iterations} iterations (span residual {span_residual:e})")]
    NotConverged { iterations: usize, span_residual: f64 },

    #[error("policy length {got} does not match state space size {expected}")]
    PolicyShape { expected: usize, got: usize },

    #[error("singular linear system while evaluating the policy-induced chain")]
    SingularChain,

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
