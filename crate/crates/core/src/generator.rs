//! Monotone finite-difference discretization of the local generator
//! `<b, grad V> + 1/2 tr[sigma sigma^T hess V]`.
//!
//! Drift is upwinded, pure second derivatives use the three-point stencil and
//! mixed derivatives use the seven-point positive-coefficient stencil whose
//! diagonal orientation follows the sign of the cross-diffusion. Neighbours
//! that fall outside the box are reflected back through the wall.

use crate::error::{Location, SolveError};
use crate::grid::GridSpec;
use crate::problem::ProblemSpec;

/// Sparse stencil rows: `(L V)_i = sum_j w_ij V_j - d_i V_i` with
/// `w_ij >= 0` and `d_i = sum_j w_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteGenerator {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
    diag: Vec<f64>,
}

impl DiscreteGenerator {
    /// Generator that is identically zero.
    pub fn zero(num_nodes: usize) -> Self {
        Self {
            offsets: vec![0; num_nodes + 1],
            cols: Vec::new(),
            weights: Vec::new(),
            diag: vec![0.0; num_nodes],
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.diag.len()
    }

    /// Off-diagonal `(column, weight)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.weights[r].iter().copied())
    }

    /// Total outflow rate `d_i` of row `i`.
    pub fn diag(&self, i: usize) -> f64 {
        self.diag[i]
    }

    /// Off-diagonal sum `sum_j w_ij V_j` of row `i`.
    #[inline]
    pub fn neighbour_sum(&self, i: usize, v: &[f64]) -> f64 {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.cols[r.clone()]
            .iter()
            .zip(&self.weights[r])
            .map(|(&j, &w)| w * v[j])
            .sum()
    }

    #[inline]
    pub fn apply_at(&self, i: usize, v: &[f64]) -> f64 {
        self.neighbour_sum(i, v) - self.diag[i] * v[i]
    }

    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.apply_at(i, v);
        }
    }

    pub fn apply_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.apply(v, &mut out);
        out
    }

    /// Smallest off-diagonal weight, for monotonicity checks.
    pub fn min_weight(&self) -> f64 {
        self.weights.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r.clamp(0, n - 1) as usize
}

/// Builds the generator at time `t`.
pub fn build_generator(
    spec: &ProblemSpec,
    grid: &GridSpec,
    t: f64,
) -> Result<DiscreteGenerator, SolveError> {
    let dim = grid.dim();
    let nd = spec.noise_dim();
    let n = grid.num_nodes();
    let h = grid.spacing();
    let counts = grid.nodes_per_axis();

    let mut x = vec![0.0; dim];
    let mut idx = vec![0usize; dim];
    let mut b = vec![0.0; dim];
    let mut sig = vec![0.0; dim * nd];
    let mut a = vec![0.0; dim * dim];
    let mut entries: Vec<(usize, f64)> = Vec::new();

    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut weights = Vec::new();
    let mut diag = Vec::with_capacity(n);
    offsets.push(0);

    for node in 0..n {
        grid.coords(node, &mut x);
        grid.multi_index(node, &mut idx);
        let at = || Location {
            t,
            x: x.clone(),
            xi: None,
        };
        spec.drift(t, &x, &mut b).map_err(|source| SolveError::Eval {
            what: "drift",
            at: at(),
            source,
        })?;
        spec.sigma(t, &x, &mut sig).map_err(|source| SolveError::Eval {
            what: "sigma",
            at: at(),
            source,
        })?;
        for p in 0..dim {
            for q in 0..dim {
                a[p * dim + q] = 0.5
                    * (0..nd)
                        .map(|k| sig[p * nd + k] * sig[q * nd + k])
                        .sum::<f64>();
            }
        }

        entries.clear();
        let mut push = |offset: &[(usize, isize)], w: f64| {
            if w == 0.0 {
                return;
            }
            let mut target = 0;
            for (ax, &i) in idx.iter().enumerate() {
                let shift = offset
                    .iter()
                    .find(|(oa, _)| *oa == ax)
                    .map_or(0, |&(_, s)| s);
                target += reflect(i as isize + shift, counts[ax]) * grid.strides()[ax];
            }
            entries.push((target, w));
        };

        for p in 0..dim {
            let hp = h[p];
            if b[p] > 0.0 {
                push(&[(p, 1)], b[p] / hp);
            } else if b[p] < 0.0 {
                push(&[(p, -1)], -b[p] / hp);
            }
            let app = a[p * dim + p];
            push(&[(p, 1)], app / (hp * hp));
            push(&[(p, -1)], app / (hp * hp));
            for q in (p + 1)..dim {
                let apq = a[p * dim + q];
                if apq == 0.0 {
                    continue;
                }
                let w = apq.abs() / (hp * h[q]);
                let s: isize = if apq > 0.0 { 1 } else { -1 };
                push(&[(p, 1), (q, s)], w);
                push(&[(p, -1), (q, -s)], w);
                push(&[(p, 1)], -w);
                push(&[(p, -1)], -w);
                push(&[(q, 1)], -w);
                push(&[(q, -1)], -w);
            }
        }

        entries.sort_by_key(|&(j, _)| j);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
        for &(j, w) in &entries {
            match merged.last_mut() {
                Some((lj, lw)) if *lj == j => *lw += w,
                _ => merged.push((j, w)),
            }
        }
        let scale = merged.iter().map(|(_, w)| w.abs()).fold(0.0, f64::max);
        let mut d = 0.0;
        for (j, w) in merged {
            if j == node {
                // reflected self-loops cancel against the diagonal
                continue;
            }
            let w = if w < 0.0 && w.abs() <= 1e-12 * scale { 0.0 } else { w };
            if w < 0.0 {
                return Err(SolveError::NonMonotone {
                    node,
                    detail: format!("negative stencil weight {w:e} towards node {j}"),
                });
            }
            if w > 0.0 {
                cols.push(j);
                weights.push(w);
                d += w;
            }
        }
        diag.push(d);
        offsets.push(cols.len());
    }

    Ok(DiscreteGenerator {
        offsets,
        cols,
        weights,
        diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expr, Expr};
    use crate::problem::ProblemData;

    fn problem(drift: &[&str], sigma: &[&[&str]]) -> ProblemSpec {
        let dim = drift.len();
        ProblemSpec::new(ProblemData {
            dim,
            horizon: 1.0,
            drift: drift.iter().map(|s| parse_expr(s).unwrap()).collect(),
            sigma: sigma
                .iter()
                .map(|r| r.iter().map(|s| parse_expr(s).unwrap()).collect())
                .collect(),
            running_reward: Expr::Const(0.0),
            terminal_reward: Expr::Const(0.0),
            cost: Expr::Const(1.0),
            impulses: vec![vec![0.0; dim]],
            cost_floor: 1.0,
        })
        .unwrap()
    }

    fn field(grid: &GridSpec, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..grid.num_nodes()).map(|n| f(&grid.node_coords(n))).collect()
    }

    #[test]
    fn degenerate_generator_is_zero() {
        let p = problem(&["0"], &[&["0"]]);
        let g = GridSpec::new(vec![-1.0], vec![1.0], vec![9], 1, 1.0).unwrap();
        let gen = build_generator(&p, &g, 0.0).unwrap();
        let v = field(&g, |x| x[0].sin());
        assert!(gen.apply_vec(&v).iter().all(|&y| y == 0.0));
    }

    #[test]
    fn constants_are_annihilated() {
        let p = problem(&["sin(x0) - t", "x1*x0"], &[&["1 + 0.2*x0", "0.3"], &["0.1", "0.8"]]);
        let g = GridSpec::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![11, 9], 1, 1.0).unwrap();
        let gen = build_generator(&p, &g, 0.3).unwrap();
        let v = vec![7.0; g.num_nodes()];
        for y in gen.apply_vec(&v) {
            assert!(y.abs() < 1e-12, "{y}");
        }
        assert!(gen.min_weight() > 0.0);
    }

    #[test]
    fn quadratic_second_difference_is_exact() {
        let p = problem(&["0"], &[&["1"]]);
        let g = GridSpec::new(vec![-2.0], vec![2.0], vec![17], 1, 1.0).unwrap();
        let gen = build_generator(&p, &g, 0.0).unwrap();
        let v = field(&g, |x| x[0] * x[0]);
        let lv = gen.apply_vec(&v);
        for node in 1..16 {
            assert!((lv[node] - 1.0).abs() < 1e-12, "node {node}: {}", lv[node]);
        }
    }

    #[test]
    fn reproduces_drift_on_coordinate_functions() {
        let p = problem(&["cos(x0)", "-0.5*x1"], &[&["0.4", "0"], &["0.1", "0.3"]]);
        let g = GridSpec::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![21, 21], 1, 1.0).unwrap();
        let gen = build_generator(&p, &g, 0.0).unwrap();
        for axis in 0..2 {
            let lv = gen.apply_vec(&field(&g, |x| x[axis]));
            for node in 0..g.num_nodes() {
                if g.is_boundary(node) {
                    continue;
                }
                let x = g.node_coords(node);
                let b = if axis == 0 { x[0].cos() } else { -0.5 * x[1] };
                assert!((lv[node] - b).abs() < 1e-12, "axis {axis} node {node}");
            }
        }
    }

    #[test]
    fn rejects_cross_terms_too_large_for_the_grid() {
        // strongly correlated noise on a very anisotropic grid
        let p = problem(&["0", "0"], &[&["1", "0"], &["1", "0"]]);
        let g = GridSpec::new(vec![0.0, 0.0], vec![1.0, 10.0], vec![11, 11], 1, 1.0).unwrap();
        assert!(matches!(
            build_generator(&p, &g, 0.0),
            Err(SolveError::NonMonotone { .. })
        ));
    }

    #[test]
    fn reflecting_wall_keeps_rows_conservative() {
        let p = problem(&["1"], &[&["0.5"]]);
        let g = GridSpec::new(vec![0.0], vec![1.0], vec![5], 1, 1.0).unwrap();
        let gen = build_generator(&p, &g, 0.0).unwrap();
        let last = g.num_nodes() - 1;
        let row: Vec<_> = gen.row(last).collect();
        assert_eq!(row.len(), 1);
        assert_eq!(row[0].0, last - 1);
        assert_eq!(gen.diag(last), row[0].1);
    }
}
