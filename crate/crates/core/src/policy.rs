//! Continuation / intervention labelling of a solved value field.

use crate::error::SolveError;
use crate::grid::GridSpec;
use crate::problem::ProblemSpec;
use crate::solver::{Discretization, SolveResult};

/// Gains within this distance of the best one count as maximizers.
pub const ARGMAX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Continue,
    /// Apply the impulse with this index into U.
    Impulse(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    /// `actions[m][node]` for every level `0..=M`.
    pub actions: Vec<Vec<Action>>,
    /// Nodes labelled `Impulse` whose maximizing impulse is not unique.
    pub tied: Vec<Vec<bool>>,
    pub contact_tol: f64,
}

impl Policy {
    pub fn continue_everywhere(levels: usize, nodes: usize) -> Self {
        Self {
            actions: vec![vec![Action::Continue; nodes]; levels],
            tied: vec![vec![false; nodes]; levels],
            contact_tol: 0.0,
        }
    }

    pub fn action(&self, m: usize, node: usize) -> Action {
        self.actions[m][node]
    }

    pub fn impulse_count(&self) -> usize {
        self.actions
            .iter()
            .flatten()
            .filter(|a| matches!(a, Action::Impulse(_)))
            .count()
    }

    pub fn tie_count(&self) -> usize {
        self.tied.iter().flatten().filter(|&&t| t).count()
    }

    pub fn is_continue_everywhere(&self) -> bool {
        self.impulse_count() == 0
    }
}

/// Default contact tolerance: twice the complementarity residual, floored so
/// that exact contact survives rounding.
pub fn default_contact_tol(result: &SolveResult) -> f64 {
    (2.0 * result.residual_summary).max(1e-10)
}

/// Labels `Impulse(argmax)` where `V - M V <= contact_tol`, ties going to the
/// lowest impulse index; the terminal level is always `Continue`.
pub fn extract_policy(
    result: &SolveResult,
    spec: &ProblemSpec,
    grid: &GridSpec,
    contact_tol: f64,
) -> Result<Policy, SolveError> {
    let disc = Discretization::new(spec, grid)?;
    extract_with(&disc, result, contact_tol)
}

pub fn extract_with(
    disc: &Discretization,
    result: &SolveResult,
    contact_tol: f64,
) -> Result<Policy, SolveError> {
    let levels = disc.grid().time_steps() + 1;
    let n = disc.grid().num_nodes();
    if result.fields.len() != levels {
        return Err(SolveError::Config(format!(
            "result has {} levels, grid has {levels}",
            result.fields.len()
        )));
    }
    let nu = disc.targets().num_impulses();
    let mut actions = vec![vec![Action::Continue; n]; levels];
    let mut tied = vec![vec![false; n]; levels];
    for m in 0..levels - 1 {
        let v = result.level(m);
        let costs = disc.costs(m);
        for node in 0..n {
            let gains: Vec<f64> = (0..nu)
                .map(|j| disc.targets().gain(node, j, v, costs))
                .collect();
            let best = gains.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if v[node] - best > contact_tol {
                continue;
            }
            let mut maximizers = gains.iter().enumerate().filter(|(_, &g)| best - g <= ARGMAX_TOL);
            let (j, _) = maximizers.next().expect("at least one impulse");
            actions[m][node] = Action::Impulse(j);
            tied[m][node] = maximizers.next().is_some();
        }
    }
    Ok(Policy {
        actions,
        tied,
        contact_tol,
    })
}
