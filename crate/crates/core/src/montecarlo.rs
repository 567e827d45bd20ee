//! Euler–Maruyama simulation of the controlled diffusion.
//!
//! Every path draws from its own ChaCha8 stream (`stream = path index`), so
//! results do not depend on how paths are spread over threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Location, SimError, SolveError};
use crate::grid::{GridSpec, TrustRegion};
use crate::policy::{Action, Policy};
use crate::problem::ProblemSpec;

pub const RNG_NAME: &str = "ChaCha8 (one stream per path)";

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub t0: f64,
    pub x0: Vec<f64>,
    pub paths: usize,
    pub dt: f64,
    pub seed: u64,
    /// Maximum number of impulses applied along one path.
    pub impulse_cap: usize,
    /// Pair path `2i` with the negated noise of path `2i + 1`.
    pub antithetic: bool,
}

impl SimConfig {
    pub fn validate(&self, spec: &ProblemSpec) -> Result<(), SimError> {
        if self.paths == 0 {
            return Err(SimError::Config("path count must be at least 1".into()));
        }
        if self.antithetic && !self.paths.is_multiple_of(2) {
            return Err(SimError::Config("antithetic sampling needs an even path count".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SimError::Config(format!("time step must be positive, got {}", self.dt)));
        }
        if self.impulse_cap == 0 {
            return Err(SimError::Config("impulse cap must be at least 1".into()));
        }
        if !(self.t0 >= 0.0 && self.t0 < spec.horizon()) {
            return Err(SimError::Config(format!(
                "start time {} must lie in [0, {})",
                self.t0,
                spec.horizon()
            )));
        }
        if self.x0.len() != spec.dim() || self.x0.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Config(format!(
                "start point must be a finite {}-vector",
                spec.dim()
            )));
        }
        Ok(())
    }
}

/// `ceil(10 (T |f|_inf + |g|_inf) / k)`, at least 1.
pub fn default_impulse_cap(value_bound: f64, cost_floor: f64) -> usize {
    let cap = (10.0 * value_bound / cost_floor).ceil();
    if cap.is_finite() && cap >= 1.0 {
        cap.min(1e6) as usize
    } else {
        1
    }
}

/// Feedback rule consulted once per simulation step.
pub trait Controller: Sync {
    fn decide(&self, t: f64, x: &[f64]) -> Option<usize>;
}

/// Never intervene.
pub struct NoImpulse;

impl Controller for NoImpulse {
    fn decide(&self, _t: f64, _x: &[f64]) -> Option<usize> {
        None
    }
}

/// Looks up the label of the nearest time level and nearest node.
pub struct GridPolicy<'a> {
    pub policy: &'a Policy,
    pub grid: &'a GridSpec,
}

impl Controller for GridPolicy<'_> {
    fn decide(&self, t: f64, x: &[f64]) -> Option<usize> {
        let m = self.grid.nearest_level(t);
        match self.policy.action(m, self.grid.nearest_node(x)) {
            Action::Continue => None,
            Action::Impulse(j) => Some(j),
        }
    }
}

/// One simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulsePath {
    /// `(t, X_t)` at every step, including the start and the horizon.
    /// Empty unless recording was requested.
    pub trajectory: Vec<(f64, Vec<f64>)>,
    /// Applied impulses `(time, index into U)`.
    pub impulses: Vec<(f64, usize)>,
    pub running_reward: f64,
    pub total_cost: f64,
    pub terminal_reward: f64,
    pub left_trust_region: bool,
}

impl ImpulsePath {
    /// Realized gain: running reward + terminal reward - costs.
    pub fn gain(&self) -> f64 {
        self.running_reward + self.terminal_reward - self.total_cost
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSummary {
    pub gain: f64,
    pub impulse_count: usize,
    pub total_cost: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub mean: f64,
    pub stderr: f64,
    pub paths: usize,
    /// `histogram[c]` = number of paths with exactly `c` impulses.
    pub impulse_histogram: Vec<usize>,
    pub mean_total_cost: f64,
    pub mean_impulses: f64,
    pub flagged: usize,
    pub seed: u64,
    pub rng: &'static str,
    pub per_path: Vec<PathSummary>,
}

impl SimReport {
    pub fn flagged_fraction(&self) -> f64 {
        self.flagged as f64 / self.paths as f64
    }
}

fn sim_eval_err(what: &'static str, t: f64, x: &[f64], xi: Option<&[f64]>, e: crate::expr::EvalError) -> SimError {
    SimError::Solve(SolveError::Eval {
        what,
        at: Location {
            t,
            x: x.to_vec(),
            xi: xi.map(<[f64]>::to_vec),
        },
        source: e,
    })
}

/// Simulates path `index` under `controller`.
pub fn simulate_path(
    spec: &ProblemSpec,
    controller: &dyn Controller,
    trust: Option<&TrustRegion>,
    cfg: &SimConfig,
    index: usize,
    record: bool,
) -> Result<ImpulsePath, SimError> {
    let (stream, sign) = if cfg.antithetic {
        ((index / 2) as u64, if index.is_multiple_of(2) { 1.0 } else { -1.0 })
    } else {
        (index as u64, 1.0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);

    let dim = spec.dim();
    let nd = spec.noise_dim();
    let span = spec.horizon() - cfg.t0;
    let steps = ((span / cfg.dt).round() as usize).max(1);
    let h = span / steps as f64;
    let sqrt_h = h.sqrt();

    let mut x = cfg.x0.clone();
    let mut b = vec![0.0; dim];
    let mut s = vec![0.0; dim * nd];
    let mut z = vec![0.0; nd];
    let mut path = ImpulsePath {
        trajectory: Vec::new(),
        impulses: Vec::new(),
        running_reward: 0.0,
        total_cost: 0.0,
        terminal_reward: 0.0,
        left_trust_region: false,
    };
    let check_trust = |x: &[f64], path: &mut ImpulsePath| {
        if let Some(tr) = trust {
            if !tr.contains(x) {
                path.left_trust_region = true;
            }
        }
    };
    check_trust(&x, &mut path);

    for k in 0..steps {
        let t = cfg.t0 + k as f64 * h;
        if record {
            path.trajectory.push((t, x.clone()));
        }
        if path.impulses.len() < cfg.impulse_cap {
            if let Some(j) = controller.decide(t, &x) {
                let xi = &spec.impulses()[j];
                let c = spec
                    .cost(t, &x, xi)
                    .map_err(|e| sim_eval_err("cost", t, &x, Some(xi), e))?;
                path.total_cost += c;
                for (a, d) in x.iter_mut().zip(xi) {
                    *a += d;
                }
                path.impulses.push((t, j));
                check_trust(&x, &mut path);
            }
        }
        let f = spec
            .running_reward(t, &x)
            .map_err(|e| sim_eval_err("running reward", t, &x, None, e))?;
        path.running_reward += f * h;
        spec.drift(t, &x, &mut b)
            .map_err(|e| sim_eval_err("drift", t, &x, None, e))?;
        spec.sigma(t, &x, &mut s)
            .map_err(|e| sim_eval_err("sigma", t, &x, None, e))?;
        for zk in z.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *zk = sign * n;
        }
        for a in 0..dim {
            let noise: f64 = (0..nd).map(|q| s[a * nd + q] * z[q]).sum();
            x[a] += b[a] * h + noise * sqrt_h;
        }
        check_trust(&x, &mut path);
    }
    if record {
        path.trajectory.push((spec.horizon(), x.clone()));
    }
    path.terminal_reward = spec
        .terminal_reward(&x)
        .map_err(|e| sim_eval_err("terminal reward", spec.horizon(), &x, None, e))?;
    Ok(path)
}

fn run(
    spec: &ProblemSpec,
    controller: &dyn Controller,
    trust: Option<&TrustRegion>,
    cfg: &SimConfig,
) -> Result<SimReport, SimError> {
    cfg.validate(spec)?;
    let outcomes: Vec<Result<PathSummary, SimError>> = (0..cfg.paths)
        .into_par_iter()
        .map(|i| {
            simulate_path(spec, controller, trust, cfg, i, false).map(|p| PathSummary {
                gain: p.gain(),
                impulse_count: p.impulses.len(),
                total_cost: p.total_cost,
                flagged: p.left_trust_region,
            })
        })
        .collect();
    let per_path = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;

    let n = per_path.len() as f64;
    let mean = per_path.iter().map(|p| p.gain).sum::<f64>() / n;
    // antithetic pairs are one sample each
    let samples: Vec<f64> = if cfg.antithetic {
        per_path
            .chunks(2)
            .map(|c| 0.5 * (c[0].gain + c[1].gain))
            .collect()
    } else {
        per_path.iter().map(|p| p.gain).collect()
    };
    let ns = samples.len() as f64;
    let stderr = if samples.len() > 1 {
        let smean = samples.iter().sum::<f64>() / ns;
        let var = samples.iter().map(|v| (v - smean).powi(2)).sum::<f64>() / (ns - 1.0);
        (var / ns).sqrt()
    } else {
        0.0
    };
    let mut hist = vec![0usize; cfg.impulse_cap + 1];
    for p in &per_path {
        hist[p.impulse_count] += 1;
    }
    while hist.len() > 1 && hist.last() == Some(&0) {
        hist.pop();
    }
    Ok(SimReport {
        mean,
        stderr,
        paths: per_path.len(),
        impulse_histogram: hist,
        mean_total_cost: per_path.iter().map(|p| p.total_cost).sum::<f64>() / n,
        mean_impulses: per_path.iter().map(|p| p.impulse_count as f64).sum::<f64>() / n,
        flagged: per_path.iter().filter(|p| p.flagged).count(),
        seed: cfg.seed,
        rng: RNG_NAME,
        per_path,
    })
}

/// Estimates the gain of `policy` from `(cfg.t0, cfg.x0)`; paths leaving the
/// trust region are counted, not dropped.
pub fn simulate_paths(
    spec: &ProblemSpec,
    policy: &Policy,
    grid: &GridSpec,
    cfg: &SimConfig,
) -> Result<SimReport, SimError> {
    let levels = grid.time_steps() + 1;
    if policy.actions.len() != levels || policy.actions.iter().any(|l| l.len() != grid.num_nodes()) {
        return Err(SimError::Config("policy does not match the grid".into()));
    }
    let trust = grid.trust_region(&spec.max_impulse_radius());
    run(spec, &GridPolicy { policy, grid }, Some(&trust), cfg)
}

/// Monte Carlo estimate of the no-impulse value `E[int f dt + g(X_T)]`.
pub fn feynman_kac_v0(spec: &ProblemSpec, cfg: &SimConfig) -> Result<SimReport, SimError> {
    run(spec, &NoImpulse, None, cfg)
}

/// Simulation under an arbitrary controller.
pub fn simulate_with(
    spec: &ProblemSpec,
    controller: &dyn Controller,
    trust: Option<&TrustRegion>,
    cfg: &SimConfig,
) -> Result<SimReport, SimError> {
    run(spec, controller, trust, cfg)
}
