//! Backward θ-scheme solver for the no-impulse value, the cascade of
//! obstacle problems with at most `n` impulses, and diagnostics of the
//! converged QVI solution.
//!
//! One backward step from level `m + 1` to level `m` solves
//!
//! ```text
//! (I - θ Δt L_m) V_m = V_{m+1} + (1 - θ) Δt L_{m+1} V_{m+1} + Δt (θ f_m + (1 - θ) f_{m+1})
//! ```
//!
//! by point relaxation; with an obstacle ψ each update is projected onto
//! `V >= ψ`, which solves the discrete complementarity problem
//! `min(A V - rhs, V - ψ) = 0` for the M-matrix `A`.

use crate::error::{Location, SolveError};
use crate::generator::{build_generator, DiscreteGenerator};
use crate::grid::{GridSpec, ValueField};
use crate::intervention::{cost_table, ImpulseTargets};
use crate::problem::ProblemSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    /// Time-stepping blend; 1 is fully implicit, 0 fully explicit.
    pub theta: f64,
    /// Stopping tolerance of the projected relaxation (sup-norm of an update sweep).
    pub obstacle_tol: f64,
    /// Cascade stops once `|V^n - V^{n-1}|_inf` drops below this.
    pub cascade_tol: f64,
    pub cascade_max: usize,
    /// Stopping tolerance of the unconstrained relaxation.
    pub linear_tol: f64,
    pub max_sweeps: usize,
    /// Relaxation factor; 1 is plain Gauss-Seidel.
    pub relaxation: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            theta: 1.0,
            obstacle_tol: 1e-12,
            cascade_tol: 1e-6,
            cascade_max: 50,
            linear_tol: 1e-12,
            max_sweeps: 100_000,
            relaxation: 1.0,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(SolveError::Config(format!("{name} must be positive, got {v}")))
            }
        };
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(SolveError::Config(format!(
                "theta must lie in [0, 1], got {}",
                self.theta
            )));
        }
        positive("obstacle tolerance", self.obstacle_tol)?;
        positive("cascade tolerance", self.cascade_tol)?;
        positive("linear tolerance", self.linear_tol)?;
        if self.cascade_max == 0 {
            return Err(SolveError::Config("cascade max must be at least 1".into()));
        }
        if self.max_sweeps == 0 {
            return Err(SolveError::Config("max sweeps must be at least 1".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(SolveError::Config(format!(
                "relaxation factor must lie in (0, 2), got {}",
                self.relaxation
            )));
        }
        Ok(())
    }
}

/// Sup and min of the nodewise increment `V^n - V^{n-1}` over all levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeStep {
    pub n: usize,
    pub sup_increment: f64,
    pub min_increment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    /// One field per time level `0..=M`.
    pub fields: Vec<ValueField>,
    pub times: Vec<f64>,
    pub history: Vec<CascadeStep>,
    pub n_used: usize,
    pub converged: bool,
    /// Sup of `|min(pdeRes, obsRes)|` over interior trust-region nodes.
    pub residual_summary: f64,
    pub theta: f64,
}

impl SolveResult {
    pub fn level(&self, m: usize) -> &[f64] {
        &self.fields[m].values
    }

    pub fn initial(&self) -> &ValueField {
        &self.fields[0]
    }

    pub fn terminal(&self) -> &ValueField {
        self.fields.last().expect("at least one level")
    }

    pub fn sup_norm(&self) -> f64 {
        self.fields.iter().map(ValueField::sup_norm).fold(0.0, f64::max)
    }

    /// Interpolated value at level `m`, with `x` clamped into the box.
    pub fn value_at(&self, grid: &GridSpec, m: usize, x: &[f64]) -> Result<f64, SolveError> {
        let mut y = x.to_vec();
        grid.clamp(&mut y);
        Ok(crate::grid::interpolate(&self.fields[m], &y, grid)?)
    }
}

/// Everything the backward sweeps need, evaluated once per level.
#[derive(Debug, Clone)]
pub struct Discretization {
    grid: GridSpec,
    generators: Vec<DiscreteGenerator>,
    running: Vec<Vec<f64>>,
    /// Cost tables for levels `0..M`; no impulse is taken at the horizon.
    costs: Vec<Vec<f64>>,
    targets: ImpulseTargets,
    terminal: Vec<f64>,
    trust: Vec<bool>,
}

fn eval_err(what: &'static str, t: f64, x: &[f64], source: crate::expr::EvalError) -> SolveError {
    SolveError::Eval {
        what,
        at: Location {
            t,
            x: x.to_vec(),
            xi: None,
        },
        source,
    }
}

fn running_reward_level(spec: &ProblemSpec, grid: &GridSpec, t: f64) -> Result<Vec<f64>, SolveError> {
    let mut x = vec![0.0; grid.dim()];
    (0..grid.num_nodes())
        .map(|node| {
            grid.coords(node, &mut x);
            spec.running_reward(t, &x)
                .map_err(|e| eval_err("running reward", t, &x, e))
        })
        .collect()
}

fn terminal_level(spec: &ProblemSpec, grid: &GridSpec) -> Result<Vec<f64>, SolveError> {
    let mut x = vec![0.0; grid.dim()];
    (0..grid.num_nodes())
        .map(|node| {
            grid.coords(node, &mut x);
            spec.terminal_reward(&x)
                .map_err(|e| eval_err("terminal reward", spec.horizon(), &x, e))
        })
        .collect()
}

fn check_compatible(spec: &ProblemSpec, grid: &GridSpec) -> Result<(), SolveError> {
    if spec.dim() != grid.dim() {
        return Err(SolveError::Config(format!(
            "problem has dimension {}, grid has {}",
            spec.dim(),
            grid.dim()
        )));
    }
    if (spec.horizon() - grid.horizon()).abs() > 1e-12 * spec.horizon() {
        return Err(SolveError::Config(format!(
            "grid horizon {} differs from problem horizon {}",
            grid.horizon(),
            spec.horizon()
        )));
    }
    Ok(())
}

impl Discretization {
    pub fn new(spec: &ProblemSpec, grid: &GridSpec) -> Result<Self, SolveError> {
        check_compatible(spec, grid)?;
        let levels = grid.time_steps() + 1;
        let mut generators = Vec::with_capacity(levels);
        let mut running = Vec::with_capacity(levels);
        let mut costs = Vec::with_capacity(levels - 1);
        for m in 0..levels {
            let t = grid.time(m);
            generators.push(build_generator(spec, grid, t)?);
            running.push(running_reward_level(spec, grid, t)?);
            if m + 1 < levels {
                costs.push(cost_table(spec, grid, t)?);
            }
        }
        let region = grid.trust_region(&spec.max_impulse_radius());
        let trust = (0..grid.num_nodes())
            .map(|n| !grid.is_boundary(n) && region.contains(&grid.node_coords(n)))
            .collect();
        Ok(Self {
            grid: grid.clone(),
            generators,
            running,
            costs,
            targets: ImpulseTargets::new(spec, grid)?,
            terminal: terminal_level(spec, grid)?,
            trust,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn terminal(&self) -> &[f64] {
        &self.terminal
    }

    pub fn targets(&self) -> &ImpulseTargets {
        &self.targets
    }

    pub fn costs(&self, m: usize) -> &[f64] {
        &self.costs[m]
    }

    pub fn generator(&self, m: usize) -> &DiscreteGenerator {
        &self.generators[m]
    }

    pub fn running(&self, m: usize) -> &[f64] {
        &self.running[m]
    }

    /// Interior nodes of the trust region.
    pub fn trusted(&self, node: usize) -> bool {
        self.trust[node]
    }

    /// Sampled `T |f|_inf + |g|_inf`.
    pub fn value_bound(&self) -> f64 {
        let f = self
            .running
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let g = self.terminal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.grid.horizon() * f + g
    }

    /// Restriction to levels `0..=m`; the level-`m` data becomes terminal.
    pub fn truncated(&self, m: usize, terminal: Vec<f64>) -> Result<Self, SolveError> {
        let grid = self.grid.truncated_in_time(m)?;
        Ok(Self {
            grid,
            generators: self.generators[..=m].to_vec(),
            running: self.running[..=m].to_vec(),
            costs: self.costs[..m].to_vec(),
            targets: self.targets.clone(),
            terminal,
            trust: self.trust.clone(),
        })
    }

    /// `M V` at level `m` using that level's cost table.
    pub fn intervention(&self, m: usize, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.targets.apply(v, &self.costs[m], &mut out);
        out
    }

    /// Right-hand side of the backward step into level `m`.
    fn rhs(&self, m: usize, v_next: &[f64], theta: f64) -> Result<Vec<f64>, SolveError> {
        let dt = self.grid.dt();
        let gen_next = &self.generators[m + 1];
        let (f_now, f_next) = (&self.running[m], &self.running[m + 1]);
        let explicit = 1.0 - theta;
        (0..v_next.len())
            .map(|i| {
                let mut r = v_next[i] + dt * (theta * f_now[i] + explicit * f_next[i]);
                if explicit > 0.0 {
                    let centre = 1.0 - explicit * dt * gen_next.diag(i);
                    if centre < 0.0 {
                        return Err(SolveError::Cfl {
                            node: i,
                            weight: centre,
                        });
                    }
                    r += explicit * dt * gen_next.apply_at(i, v_next);
                }
                Ok(r)
            })
            .collect()
    }

    /// One backward step into level `m`, optionally above `obstacle`.
    pub fn step(
        &self,
        m: usize,
        v_next: &[f64],
        obstacle: Option<&[f64]>,
        cfg: &SolveConfig,
    ) -> Result<Vec<f64>, SolveError> {
        let rhs = self.rhs(m, v_next, cfg.theta)?;
        let gen = &self.generators[m];
        let k = cfg.theta * self.grid.dt();
        let omega = cfg.relaxation;
        let tol = if obstacle.is_some() {
            cfg.obstacle_tol
        } else {
            cfg.linear_tol
        };

        let mut v = v_next.to_vec();
        if let Some(psi) = obstacle {
            for (a, &p) in v.iter_mut().zip(psi) {
                *a = a.max(p);
            }
        }
        let mut last = f64::INFINITY;
        for _ in 0..cfg.max_sweeps {
            let mut delta = 0.0f64;
            for i in 0..v.len() {
                let gs = (rhs[i] + k * gen.neighbour_sum(i, &v)) / (1.0 + k * gen.diag(i));
                let mut new = if omega == 1.0 {
                    gs
                } else {
                    (1.0 - omega) * v[i] + omega * gs
                };
                if let Some(psi) = obstacle {
                    new = new.max(psi[i]);
                }
                delta = delta.max((new - v[i]).abs());
                v[i] = new;
            }
            last = delta;
            if delta <= tol {
                return Ok(v);
            }
        }
        Err(SolveError::NoConvergence {
            time_index: m,
            sweeps: cfg.max_sweeps,
            residual: last,
        })
    }

    /// Full backward sweep from the terminal data. With `previous`, level `m`
    /// is solved above the obstacle `M previous[m]`.
    pub fn sweep(
        &self,
        previous: Option<&[Vec<f64>]>,
        cfg: &SolveConfig,
    ) -> Result<Vec<Vec<f64>>, SolveError> {
        let levels = self.grid.time_steps() + 1;
        let mut out = vec![Vec::new(); levels];
        out[levels - 1] = self.terminal.clone();
        for m in (0..levels - 1).rev() {
            let obstacle = previous.map(|p| self.intervention(m, &p[m]));
            out[m] = self.step(m, &out[m + 1], obstacle.as_deref(), cfg)?;
        }
        Ok(out)
    }

    /// Runs the cascade `V^0, V^1, ..` until the increment falls below the
    /// cascade tolerance or `cascade_max` iterations are spent.
    pub fn cascade(&self, cfg: &SolveConfig) -> Result<SolveResult, SolveError> {
        cfg.validate()?;
        let mut prev = self.sweep(None, cfg)?;
        let mut history = Vec::new();
        let mut converged = false;
        for n in 1..=cfg.cascade_max {
            let next = self.sweep(Some(&prev), cfg)?;
            let step = increment(n, &prev, &next);
            history.push(step);
            prev = next;
            if step.sup_increment < cfg.cascade_tol {
                converged = true;
                break;
            }
        }
        Ok(self.package(prev, history, converged, cfg))
    }

    /// Fixed-point iteration started from the supersolution
    /// `W(t) = (T - t)|f|_inf + |g|_inf`, which decreases to the same limit.
    pub fn iterate_from_above(&self, cfg: &SolveConfig) -> Result<SolveResult, SolveError> {
        cfg.validate()?;
        let f_sup = self
            .running
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let g_sup = self.terminal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let levels = self.grid.time_steps() + 1;
        let n = self.grid.num_nodes();
        let mut prev: Vec<Vec<f64>> = (0..levels)
            .map(|m| {
                if m + 1 == levels {
                    self.terminal.clone()
                } else {
                    let rest = self.grid.horizon() - self.grid.time(m);
                    vec![rest * f_sup + g_sup; n]
                }
            })
            .collect();
        let mut history = Vec::new();
        let mut converged = false;
        for k in 1..=cfg.cascade_max {
            let next = self.sweep(Some(&prev), cfg)?;
            let step = increment(k, &prev, &next);
            history.push(step);
            prev = next;
            // decreasing sequence: the sup of |increment| is -min
            if step.sup_increment.max(-step.min_increment) < cfg.cascade_tol {
                converged = true;
                break;
            }
        }
        Ok(self.package(prev, history, converged, cfg))
    }

    pub fn no_impulse(&self, cfg: &SolveConfig) -> Result<SolveResult, SolveError> {
        cfg.validate()?;
        let v = self.sweep(None, cfg)?;
        Ok(self.package(v, Vec::new(), true, cfg))
    }

    fn package(
        &self,
        levels: Vec<Vec<f64>>,
        history: Vec<CascadeStep>,
        converged: bool,
        cfg: &SolveConfig,
    ) -> SolveResult {
        let n_used = history.len();
        let times = (0..levels.len()).map(|m| self.grid.time(m)).collect();
        let mut result = SolveResult {
            fields: levels
                .into_iter()
                .enumerate()
                .map(|(m, v)| ValueField::new(m, v))
                .collect(),
            times,
            history,
            n_used,
            converged,
            residual_summary: 0.0,
            theta: cfg.theta,
        };
        result.residual_summary = self.residuals(&result).summary;
        result
    }

    pub fn residuals(&self, result: &SolveResult) -> Residuals {
        let levels = result.fields.len();
        let dt = self.grid.dt();
        let theta = result.theta;
        let mut pde = Vec::with_capacity(levels - 1);
        let mut obstacle = Vec::with_capacity(levels - 1);
        let mut complementarity = Vec::with_capacity(levels - 1);
        let mut summary = 0.0f64;
        for m in 0..levels - 1 {
            let v = result.level(m);
            let vn = result.level(m + 1);
            let (gen, gen_next) = (&self.generators[m], &self.generators[m + 1]);
            let (f, f_next) = (&self.running[m], &self.running[m + 1]);
            let mv = self.intervention(m, v);
            let mut p = Vec::with_capacity(v.len());
            let mut o = Vec::with_capacity(v.len());
            let mut c = Vec::with_capacity(v.len());
            for i in 0..v.len() {
                let lv = theta * gen.apply_at(i, v) + (1.0 - theta) * gen_next.apply_at(i, vn);
                let fb = theta * f[i] + (1.0 - theta) * f_next[i];
                let pr = (v[i] - vn[i]) / dt - lv - fb;
                let or = v[i] - mv[i];
                let cr = pr.min(or);
                if self.trust[i] {
                    summary = summary.max(cr.abs());
                }
                p.push(pr);
                o.push(or);
                c.push(cr);
            }
            pde.push(p);
            obstacle.push(o);
            complementarity.push(c);
        }
        Residuals {
            pde,
            obstacle,
            complementarity,
            summary,
        }
    }
}

fn increment(n: usize, prev: &[Vec<f64>], next: &[Vec<f64>]) -> CascadeStep {
    let mut sup = 0.0f64;
    let mut min = f64::INFINITY;
    for (a, b) in prev.iter().zip(next) {
        for (x, y) in a.iter().zip(b) {
            let d = y - x;
            sup = sup.max(d.abs());
            min = min.min(d);
        }
    }
    CascadeStep {
        n,
        sup_increment: sup,
        min_increment: min,
    }
}

/// Nodewise residuals per level `0..M`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    /// Discrete `-dV/dt - L V - f`.
    pub pde: Vec<Vec<f64>>,
    /// `V - M V`.
    pub obstacle: Vec<Vec<f64>>,
    /// `min(pde, obstacle)`.
    pub complementarity: Vec<Vec<f64>>,
    pub summary: f64,
}

fn single_step_disc(
    v_next: &ValueField,
    t: f64,
    spec: &ProblemSpec,
    grid: &GridSpec,
) -> Result<(Discretization, usize), SolveError> {
    check_compatible(spec, grid)?;
    grid.check_field(&v_next.values)?;
    let m = grid.nearest_level(t);
    if m >= grid.time_steps() || (grid.time(m) - t).abs() > 1e-9 * grid.horizon().max(1.0) {
        return Err(SolveError::Config(format!(
            "t = {t} is not a time level before the horizon"
        )));
    }
    let (t0, t1) = (grid.time(m), grid.time(m + 1));
    // a two-level slice of the full discretization
    let disc = Discretization {
        grid: GridSpec::new(
            grid.lo().to_vec(),
            grid.hi().to_vec(),
            grid.nodes_per_axis().to_vec(),
            1,
            grid.dt(),
        )?,
        generators: vec![build_generator(spec, grid, t0)?, build_generator(spec, grid, t1)?],
        running: vec![
            running_reward_level(spec, grid, t0)?,
            running_reward_level(spec, grid, t1)?,
        ],
        costs: vec![cost_table(spec, grid, t0)?],
        targets: ImpulseTargets::new(spec, grid)?,
        terminal: v_next.values.clone(),
        trust: vec![true; grid.num_nodes()],
    };
    Ok((disc, m))
}

/// One backward step of `dV/dt + L V + f = 0` into the level at time `t`.
pub fn solve_pde_step(
    v_next: &ValueField,
    t: f64,
    spec: &ProblemSpec,
    grid: &GridSpec,
    cfg: &SolveConfig,
) -> Result<ValueField, SolveError> {
    cfg.validate()?;
    let (disc, m) = single_step_disc(v_next, t, spec, grid)?;
    let v = disc.step(0, &v_next.values, None, cfg)?;
    Ok(ValueField::new(m, v))
}

/// One backward step of the obstacle problem above `obstacle` (frozen at `t`).
pub fn solve_obstacle_step(
    v_next: &ValueField,
    obstacle: &ValueField,
    t: f64,
    spec: &ProblemSpec,
    grid: &GridSpec,
    cfg: &SolveConfig,
) -> Result<ValueField, SolveError> {
    cfg.validate()?;
    grid.check_field(&obstacle.values)?;
    let (disc, m) = single_step_disc(v_next, t, spec, grid)?;
    let v = disc.step(0, &v_next.values, Some(&obstacle.values), cfg)?;
    Ok(ValueField::new(m, v))
}

/// Value with no impulses allowed.
pub fn solve_v0(
    spec: &ProblemSpec,
    grid: &GridSpec,
    cfg: &SolveConfig,
) -> Result<SolveResult, SolveError> {
    Discretization::new(spec, grid)?.no_impulse(cfg)
}

/// Cascade of obstacle problems converging up to the QVI solution.
pub fn iterated_optimal_stopping(
    spec: &ProblemSpec,
    grid: &GridSpec,
    cfg: &SolveConfig,
) -> Result<SolveResult, SolveError> {
    Discretization::new(spec, grid)?.cascade(cfg)
}

pub fn qvi_residuals(
    result: &SolveResult,
    spec: &ProblemSpec,
    grid: &GridSpec,
) -> Result<Residuals, SolveError> {
    let disc = Discretization::new(spec, grid)?;
    if result.fields.len() != grid.time_steps() + 1 {
        return Err(SolveError::Config(format!(
            "result has {} levels, grid has {}",
            result.fields.len(),
            grid.time_steps() + 1
        )));
    }
    Ok(disc.residuals(result))
}

/// Re-solves on `[0, t_r]` with `V(t_r, .)` as terminal data and returns
/// `|V_restart(0, .) - V(0, .)|_inf`.
pub fn dpp_restart_check(
    result: &SolveResult,
    r_index: usize,
    spec: &ProblemSpec,
    grid: &GridSpec,
    cfg: &SolveConfig,
) -> Result<f64, SolveError> {
    if r_index > grid.time_steps() || result.fields.len() != grid.time_steps() + 1 {
        return Err(SolveError::Config(format!(
            "restart index {r_index} is outside 0..={}",
            grid.time_steps()
        )));
    }
    if r_index == 0 {
        return Ok(0.0);
    }
    let disc = Discretization::new(spec, grid)?.truncated(r_index, result.level(r_index).to_vec())?;
    let restart = disc.cascade(cfg)?;
    Ok(restart
        .level(0)
        .iter()
        .zip(result.level(0))
        .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
}

/// `Γ_m = exp(t_m) V_m` per level.
pub fn exp_transform(result: &SolveResult) -> Vec<ValueField> {
    scale_levels(&result.fields, &result.times, 1.0)
}

/// Inverse of [`exp_transform`]: `V_m = exp(-t_m) Γ_m`.
pub fn exp_transform_inverse(fields: &[ValueField], times: &[f64]) -> Vec<ValueField> {
    scale_levels(fields, times, -1.0)
}

fn scale_levels(fields: &[ValueField], times: &[f64], sign: f64) -> Vec<ValueField> {
    fields
        .iter()
        .zip(times)
        .map(|(f, &t)| {
            let s = (sign * t).exp();
            ValueField::new(f.time_index, f.values.iter().map(|v| v * s).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::problem::ProblemData;

    fn spec_1d(b: &str, s: &str, f: &str, g: &str, cost: &str, u: &[f64], horizon: f64) -> ProblemSpec {
        ProblemSpec::new(ProblemData {
            dim: 1,
            horizon,
            drift: vec![parse_expr(b).unwrap()],
            sigma: vec![vec![parse_expr(s).unwrap()]],
            running_reward: parse_expr(f).unwrap(),
            terminal_reward: parse_expr(g).unwrap(),
            cost: parse_expr(cost).unwrap(),
            impulses: u.iter().map(|&x| vec![x]).collect(),
            cost_floor: 0.1,
        })
        .unwrap()
    }

    fn grid(lo: f64, hi: f64, n: usize, m: usize, horizon: f64) -> GridSpec {
        GridSpec::new(vec![lo], vec![hi], vec![n], m, horizon).unwrap()
    }

    #[test]
    fn config_validation() {
        let mut c = SolveConfig::default();
        assert!(c.validate().is_ok());
        c.theta = 1.5;
        assert!(c.validate().is_err());
        let c = SolveConfig {
            cascade_max: 0,
            ..SolveConfig::default()
        };
        assert!(c.validate().is_err());
        let c = SolveConfig {
            cascade_tol: 0.0,
            ..SolveConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn pde_step_transports_constants() {
        let spec = spec_1d("0", "0", "0", "0", "1", &[0.5], 1.0);
        let g = grid(-1.0, 1.0, 9, 10, 1.0);
        let v = solve_pde_step(&ValueField::constant(10, 9, 5.0), 0.9, &spec, &g, &SolveConfig::default())
            .unwrap();
        assert!(v.values.iter().all(|&x| x == 5.0));
        assert_eq!(v.time_index, 9);
    }

    #[test]
    fn pde_step_integrates_running_reward() {
        let spec = spec_1d("0", "0", "1", "0", "1", &[0.5], 1.0);
        let g = grid(-1.0, 1.0, 9, 10, 1.0);
        let v = solve_pde_step(&ValueField::constant(10, 9, 0.0), 0.9, &spec, &g, &SolveConfig::default())
            .unwrap();
        assert!(v.values.iter().all(|&x| (x - 0.1).abs() < 1e-15));
    }

    #[test]
    fn pde_step_rejects_off_level_times() {
        let spec = spec_1d("0", "0", "1", "0", "1", &[0.5], 1.0);
        let g = grid(-1.0, 1.0, 9, 10, 1.0);
        let v = ValueField::constant(10, 9, 0.0);
        assert!(solve_pde_step(&v, 0.95, &spec, &g, &SolveConfig::default()).is_err());
        assert!(solve_pde_step(&v, 1.0, &spec, &g, &SolveConfig::default()).is_err());
    }

    #[test]
    fn v0_of_running_reward_is_remaining_time() {
        let spec = spec_1d("sin(x0)", "0.3 + 0.1*cos(x0)", "1", "0", "1", &[0.5], 1.0);
        let g = grid(-2.0, 2.0, 41, 20, 1.0);
        let r = solve_v0(&spec, &g, &SolveConfig::default()).unwrap();
        for (m, f) in r.fields.iter().enumerate() {
            for v in &f.values {
                assert!((v - (1.0 - g.time(m))).abs() < 1e-10, "level {m}: {v}");
            }
        }
    }

    #[test]
    fn zero_data_gives_zero_value() {
        let spec = spec_1d("0.3", "0.5", "0", "0", "0.1", &[-0.5, 0.5], 1.0);
        let g = grid(-2.0, 2.0, 21, 10, 1.0);
        let r = iterated_optimal_stopping(&spec, &g, &SolveConfig::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.n_used, 1);
        assert!(r.fields.iter().all(|f| f.values.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn obstacle_step_limits() {
        let spec = spec_1d("0", "0.5", "0", "max0(1 - abs(x0))", "0.1", &[-0.5, 0.5], 1.0);
        let g = grid(-2.0, 2.0, 21, 10, 1.0);
        let cfg = SolveConfig::default();
        let vnext = ValueField::new(10, (0..21).map(|i| (i as f64 * 0.3).cos()).collect());
        let free = solve_pde_step(&vnext, 0.9, &spec, &g, &cfg).unwrap();
        let low = ValueField::constant(9, 21, -1e300);
        let inactive = solve_obstacle_step(&vnext, &low, 0.9, &spec, &g, &cfg).unwrap();
        assert_eq!(free, inactive);

        let high = ValueField::constant(9, 21, 10.0);
        let zero = ValueField::constant(10, 21, 0.0);
        let active = solve_obstacle_step(&zero, &high, 0.9, &spec, &g, &cfg).unwrap();
        assert!(active.values.iter().all(|&v| v == 10.0));
    }

    #[test]
    fn explicit_mode_guards_cfl() {
        let spec = spec_1d("0", "1", "0", "x0*x0", "0.1", &[0.5], 1.0);
        let g = grid(-2.0, 2.0, 41, 10, 1.0);
        let cfg = SolveConfig {
            theta: 0.0,
            ..SolveConfig::default()
        };
        assert!(matches!(solve_v0(&spec, &g, &cfg), Err(SolveError::Cfl { .. })));
        let fine = grid(-2.0, 2.0, 41, 400, 1.0);
        let explicit = solve_v0(&spec, &fine, &cfg).unwrap();
        let implicit = solve_v0(&spec, &fine, &SolveConfig::default()).unwrap();
        let mid = 20;
        // both schemes are first order in time
        assert!((explicit.level(0)[mid] - implicit.level(0)[mid]).abs() < fine.dt());
    }

    #[test]
    fn exp_transform_round_trip() {
        let spec = spec_1d("0", "0.5", "0.2*x0", "max0(1 - abs(x0))", "0.1", &[-0.5, 0.5], 1.0);
        let g = grid(-2.0, 2.0, 21, 10, 1.0);
        let r = iterated_optimal_stopping(&spec, &g, &SolveConfig::default()).unwrap();
        let gamma = exp_transform(&r);
        assert_eq!(gamma[0].values, r.level(0));
        let e = 1f64.exp();
        for (a, b) in gamma[10].values.iter().zip(r.level(10)) {
            assert_eq!(*a, b * e);
        }
        let back = exp_transform_inverse(&gamma, &r.times);
        for (f, o) in back.iter().zip(&r.fields) {
            for (a, b) in f.values.iter().zip(&o.values) {
                assert!((a - b).abs() <= 1e-14 * b.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn restart_at_ends_is_exact() {
        let spec = spec_1d("0", "0.5", "0", "max0(1 - abs(x0))", "0.1", &[-0.5, 0.5], 1.0);
        let g = grid(-2.0, 2.0, 41, 20, 1.0);
        let cfg = SolveConfig::default();
        let r = iterated_optimal_stopping(&spec, &g, &cfg).unwrap();
        assert_eq!(dpp_restart_check(&r, 0, &spec, &g, &cfg).unwrap(), 0.0);
        assert_eq!(dpp_restart_check(&r, 20, &spec, &g, &cfg).unwrap(), 0.0);
        assert!(dpp_restart_check(&r, 21, &spec, &g, &cfg).is_err());
    }
}
