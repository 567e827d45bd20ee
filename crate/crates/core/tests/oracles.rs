//! Solver output against brute-force references on tiny lattices.
#![allow(clippy::needless_range_loop)]

mod common;

use impulse_qvi::policy::{extract_policy, Action};
use impulse_qvi::{iterated_optimal_stopping, GridSpec, ProblemSpec, SolveConfig};

const DETERMINISTIC: &str = "\
dim = 1
horizon = 1.2
drift.0 = 0
sigma.0.0 = 0
running_reward = cos(2*x0) - 0.5*t*x0
terminal_reward = 0.03*sin(2*x0)
cost = 0.05 + 0.02*abs(x0) + 0.03*abs(xi0)
impulse.0 = -0.5
impulse.1 = 0.5
impulse.2 = 1.0
cost_floor = 0.05
";

fn tight() -> SolveConfig {
    SolveConfig {
        cascade_tol: 1e-13,
        obstacle_tol: 1e-14,
        linear_tol: 1e-14,
        ..SolveConfig::default()
    }
}

#[test]
fn deterministic_instance_matches_chain_enumeration() {
    let spec = ProblemSpec::from_config_str(DETERMINISTIC).unwrap();
    let grid = GridSpec::new(vec![-1.5], vec![1.5], vec![7], 6, 1.2).unwrap();
    let oracle = common::chain_oracle(&spec, &grid);
    let r = iterated_optimal_stopping(&spec, &grid, &tight()).unwrap();
    let p = extract_policy(&r, &spec, &grid, 1e-10).unwrap();
    assert!(r.converged);

    let steps = grid.time_steps();
    for m in 0..=steps {
        for i in 0..grid.num_nodes() {
            assert!(
                (r.level(m)[i] - oracle.values[m][i]).abs() <= 1e-8,
                "level {m} node {i}: {} vs {}",
                r.level(m)[i],
                oracle.values[m][i]
            );
        }
    }
    let mut impulses_seen = 0;
    for m in 0..steps {
        for i in 0..grid.num_nodes() {
            if oracle.margins[m][i] < 1e-6 {
                continue;
            }
            let expected = oracle.first_moves[m][i].map_or(Action::Continue, Action::Impulse);
            if expected != Action::Continue {
                impulses_seen += 1;
            }
            assert_eq!(p.action(m, i), expected, "level {m} node {i}");
        }
    }
    assert!(impulses_seen > 0, "instance should exercise interventions");
    assert!(p.actions[steps].iter().all(|a| *a == Action::Continue));
}

#[test]
fn shipped_deterministic_instance_is_the_oracle_instance() {
    let (spec, grid) = common::instance("deterministic");
    assert_eq!(spec, ProblemSpec::from_config_str(DETERMINISTIC).unwrap());
    assert_eq!(grid, GridSpec::new(vec![-1.5], vec![1.5], vec![7], 6, 1.2).unwrap());
}

/// Dense Gaussian elimination with partial pivoting; `None` when singular.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

const DIFFUSIVE: &str = "\
dim = 1
horizon = 0.8
drift.0 = 0.4 - 0.6*x0
sigma.0.0 = 0.5
running_reward = 0.3*x0 - 0.2*x0*x0
terminal_reward = max0(1 - abs(x0))
cost = 0.08 + 0.02*abs(x0)
impulse.0 = -0.5
impulse.1 = 0.5
cost_floor = 0.08
";

/// Independent reflecting-wall generator: upwind drift, central diffusion.
fn generator_row(spec: &ProblemSpec, grid: &GridSpec, t: f64, i: usize) -> Vec<(usize, f64)> {
    let n = grid.num_nodes();
    let h = grid.spacing()[0];
    let x = grid.axis_coord(0, i);
    let mut b = [0.0];
    spec.drift(t, &[x], &mut b).unwrap();
    let mut s = [0.0];
    spec.sigma(t, &[x], &mut s).unwrap();
    let a = s[0] * s[0];
    let right = if i + 1 < n { i + 1 } else { n - 2 };
    let left = if i > 0 { i - 1 } else { 1 };
    vec![
        (right, a / (2.0 * h * h) + b[0].max(0.0) / h),
        (left, a / (2.0 * h * h) + (-b[0]).max(0.0) / h),
    ]
}

/// Exhaustive policy enumeration per level: the scheme's solution dominates
/// every admissible feedback, and equals the best one.
fn enumerate_levels(spec: &ProblemSpec, grid: &GridSpec, theta: f64) -> Vec<Vec<f64>> {
    let n = grid.num_nodes();
    let nu = spec.impulses().len();
    let dt = grid.dt();
    let steps = grid.time_steps();
    let coord = |i: usize| grid.axis_coord(0, i);
    let mut v: Vec<f64> = (0..n).map(|i| spec.terminal_reward(&[coord(i)]).unwrap()).collect();
    let mut out = vec![v.clone()];
    for m in (0..steps).rev() {
        let (t, t1) = (grid.time(m), grid.time(m + 1));
        let rhs: Vec<f64> = (0..n)
            .map(|i| {
                let lv1: f64 = generator_row(spec, grid, t1, i)
                    .iter()
                    .map(|&(k, w)| w * (v[k] - v[i]))
                    .sum();
                let f = theta * spec.running_reward(t, &[coord(i)]).unwrap()
                    + (1.0 - theta) * spec.running_reward(t1, &[coord(i)]).unwrap();
                v[i] + (1.0 - theta) * dt * lv1 + dt * f
            })
            .collect();
        let targets: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                spec.impulses()
                    .iter()
                    .map(|xi| {
                        let mut y = vec![coord(i) + xi[0]];
                        grid.clamp(&mut y);
                        (grid.nearest_node(&y), spec.cost(t, &[coord(i)], xi).unwrap())
                    })
                    .collect()
            })
            .collect();
        let mut best = vec![f64::NEG_INFINITY; n];
        let total = (nu + 1).pow(n as u32);
        for code in 0..total {
            let mut a = vec![vec![0.0; n]; n];
            let mut b = vec![0.0; n];
            let mut c = code;
            let mut ok = true;
            for i in 0..n {
                let choice = c % (nu + 1);
                c /= nu + 1;
                if choice == 0 {
                    a[i][i] = 1.0;
                    for (k, w) in generator_row(spec, grid, t, i) {
                        a[i][i] += theta * dt * w;
                        a[i][k] -= theta * dt * w;
                    }
                    b[i] = rhs[i];
                } else {
                    let (k, cost) = targets[i][choice - 1];
                    if k == i {
                        ok = false;
                        break;
                    }
                    a[i][i] = 1.0;
                    a[i][k] = -1.0;
                    b[i] = -cost;
                }
            }
            if !ok {
                continue;
            }
            if let Some(x) = solve_dense(a, b) {
                for i in 0..n {
                    best[i] = best[i].max(x[i]);
                }
            }
        }
        v = best;
        out.push(v.clone());
    }
    out.reverse();
    out
}

#[test]
fn diffusive_instance_matches_policy_enumeration() {
    let spec = ProblemSpec::from_config_str(DIFFUSIVE).unwrap();
    let grid = GridSpec::new(vec![-1.5], vec![1.5], vec![7], 8, 0.8).unwrap();
    for theta in [1.0, 0.5] {
        let oracle = enumerate_levels(&spec, &grid, theta);
        let cfg = SolveConfig { theta, ..tight() };
        let r = iterated_optimal_stopping(&spec, &grid, &cfg).unwrap();
        assert!(r.converged);
        for m in 0..=grid.time_steps() {
            for i in 0..grid.num_nodes() {
                assert!(
                    (r.level(m)[i] - oracle[m][i]).abs() <= 1e-8,
                    "theta {theta} level {m} node {i}: {} vs {}",
                    r.level(m)[i],
                    oracle[m][i]
                );
            }
        }
    }
}
