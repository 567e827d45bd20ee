use thiserror::Error;

use crate::expr::EvalError;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("invalid problem: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("point {point:?} lies outside the grid box")]
    OutsideBox { point: Vec<f64> },
    #[error("field has {found} values, grid has {expected} nodes")]
    SizeMismatch { expected: usize, found: usize },
}

/// Location attached to a coefficient evaluation failure.
#[derive(Debug, Clone, PartialEq)]
pub struct Location {
    pub t: f64,
    pub x: Vec<f64>,
    pub xi: Option<Vec<f64>>,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("evaluating {what} at t={}, x={:?}: {source}", .at.t, .at.x)]
    Eval {
        what: &'static str,
        at: Location,
        source: EvalError,
    },
    #[error(
        "non-monotone discretization at node {node}: {detail}; refine the grid (or reduce the cross-diffusion)"
    )]
    NonMonotone { node: usize, detail: String },
    #[error("explicit part violates the CFL bound at node {node} (centre weight {weight}); use more time steps or a larger theta")]
    Cfl { node: usize, weight: f64 },
    #[error("relaxation did not converge in {sweeps} sweeps at time index {time_index} (last update {residual:e})")]
    NoConvergence {
        time_index: usize,
        sweeps: usize,
        residual: f64,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("invalid simulation configuration: {0}")]
    Config(String),
}
