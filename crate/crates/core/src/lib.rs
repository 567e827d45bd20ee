//! Impulse-control value functions via a quasi-variational inequality.
//!
//! The value `V` of an impulse-control problem is computed as the limit of a
//! cascade of optimal-stopping problems, each solved by a monotone
//! finite-difference scheme with projected Gauss–Seidel. A policy is read off
//! the contact set and checked by Monte Carlo simulation.

#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod expr;
pub mod generator;
pub mod grid;
pub mod intervention;
pub mod io;
pub mod montecarlo;
pub mod policy;
pub mod problem;
pub mod solver;
pub mod validate;

pub use error::{GridError, Location, ProblemError, SimError, SolveError};
pub use expr::{parse_expr, EvalError, Expr, ParseError};
pub use grid::{interpolate, GridSpec, TrustRegion, ValueField};
pub use intervention::intervention_operator;
pub use montecarlo::{feynman_kac_v0, simulate_paths, SimConfig, SimReport};
pub use policy::{default_contact_tol, extract_policy, Action, Policy};
pub use problem::{ProblemData, ProblemSpec};
pub use solver::{
    dpp_restart_check, exp_transform, exp_transform_inverse, iterated_optimal_stopping,
    qvi_residuals, solve_obstacle_step, solve_pde_step, solve_v0, SolveConfig, SolveResult,
};
pub use validate::{validate_problem, Assumption, ValidationReport};
