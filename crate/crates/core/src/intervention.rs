//! Discrete intervention operator
//! `M V(x) = max_j [ V(clamp(x + xi_j)) - c(t, x, xi_j) ]`.

use rayon::prelude::*;

use crate::error::{Location, SolveError};
use crate::grid::{GridSpec, ValueField};
use crate::problem::ProblemSpec;

/// Interpolation stencils of the clamped impulse targets of every node.
///
/// Targets do not depend on time, so one table serves every level.
#[derive(Debug, Clone)]
pub struct ImpulseTargets {
    num_impulses: usize,
    /// Indexed by `node * num_impulses + j`.
    stencils: Vec<Vec<(usize, f64)>>,
}

impl ImpulseTargets {
    pub fn new(spec: &ProblemSpec, grid: &GridSpec) -> Result<Self, SolveError> {
        let u = spec.impulses();
        let mut stencils = Vec::with_capacity(grid.num_nodes() * u.len());
        let mut y = vec![0.0; grid.dim()];
        for node in 0..grid.num_nodes() {
            grid.coords(node, &mut y);
            let x = y.clone();
            for xi in u {
                for a in 0..y.len() {
                    y[a] = x[a] + xi[a];
                }
                grid.clamp(&mut y);
                stencils.push(grid.stencil(&y)?);
            }
            y.copy_from_slice(&x);
        }
        Ok(Self {
            num_impulses: u.len(),
            stencils,
        })
    }

    pub fn num_impulses(&self) -> usize {
        self.num_impulses
    }

    #[inline]
    pub fn target_value(&self, node: usize, j: usize, v: &[f64]) -> f64 {
        self.stencils[node * self.num_impulses + j]
            .iter()
            .map(|&(k, w)| w * v[k])
            .sum()
    }

    /// Applies the operator with the given cost table (`node * nu + j`).
    pub fn apply(&self, v: &[f64], costs: &[f64], out: &mut [f64]) {
        let nu = self.num_impulses;
        out.par_iter_mut().enumerate().for_each(|(node, o)| {
            *o = (0..nu)
                .map(|j| self.target_value(node, j, v) - costs[node * nu + j])
                .fold(f64::NEG_INFINITY, f64::max);
        });
    }

    /// Gain `V(x + xi_j) - c_j` of impulse `j` at `node`.
    #[inline]
    pub fn gain(&self, node: usize, j: usize, v: &[f64], costs: &[f64]) -> f64 {
        self.target_value(node, j, v) - costs[node * self.num_impulses + j]
    }
}

/// Cost table `c(t, x_node, xi_j)` at time `t`, indexed `node * nu + j`.
pub fn cost_table(spec: &ProblemSpec, grid: &GridSpec, t: f64) -> Result<Vec<f64>, SolveError> {
    let u = spec.impulses();
    let mut out = Vec::with_capacity(grid.num_nodes() * u.len());
    let mut x = vec![0.0; grid.dim()];
    for node in 0..grid.num_nodes() {
        grid.coords(node, &mut x);
        for xi in u {
            let c = spec.cost(t, &x, xi).map_err(|source| SolveError::Eval {
                what: "cost",
                at: Location {
                    t,
                    x: x.clone(),
                    xi: Some(xi.clone()),
                },
                source,
            })?;
            out.push(c);
        }
    }
    Ok(out)
}

/// Applies the intervention operator to the slice `field` at time `t`.
pub fn intervention_operator(
    field: &ValueField,
    t: f64,
    spec: &ProblemSpec,
    grid: &GridSpec,
) -> Result<ValueField, SolveError> {
    grid.check_field(&field.values)?;
    let targets = ImpulseTargets::new(spec, grid)?;
    let costs = cost_table(spec, grid, t)?;
    let mut out = vec![0.0; field.values.len()];
    targets.apply(&field.values, &costs, &mut out);
    Ok(ValueField::new(field.time_index, out))
}
