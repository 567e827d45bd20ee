//! Sampled checks of the standing assumptions on a lattice.
//!
//! Failures are reported, never raised. Every failed check carries a witness.

use std::fmt;

use crate::grid::GridSpec;
use crate::problem::ProblemSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assumption {
    /// Drift and diffusion bounded and Lipschitz in x.
    LipschitzCoefficients,
    /// Running and terminal rewards bounded.
    BoundedRewards,
    /// `c >= k` everywhere.
    CostFloor,
    /// `c(xi1 + xi2) <= c(xi1) + c(xi2)` for pairs whose sum is in U.
    Subadditivity,
    /// `max_xi [g(x + xi) - c(T, x, xi)] <= g(x)`.
    TerminalNoImpulse,
}

impl Assumption {
    pub fn label(self) -> &'static str {
        match self {
            Assumption::LipschitzCoefficients => "H1 lipschitz-coefficients",
            Assumption::BoundedRewards => "H2 bounded-rewards",
            Assumption::CostFloor => "H3 cost-floor",
            Assumption::Subadditivity => "H3 subadditivity",
            Assumption::TerminalNoImpulse => "H4 terminal-no-impulse",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub t: f64,
    pub x: Vec<f64>,
    pub impulses: Vec<Vec<f64>>,
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} x={:?}", self.t, self.x)?;
        for xi in &self.impulses {
            write!(f, " xi={xi:?}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub assumption: Assumption,
    pub passed: bool,
    /// Largest `lhs - rhs` of the sampled inequality; `+inf` on evaluation errors.
    pub worst_violation: f64,
    pub witness: Option<Witness>,
    pub note: Option<String>,
}

impl CheckResult {
    fn new(assumption: Assumption) -> Self {
        Self {
            assumption,
            passed: true,
            worst_violation: f64::NEG_INFINITY,
            witness: None,
            note: None,
        }
    }

    fn observe(&mut self, violation: f64, at: impl FnOnce() -> Witness) {
        if violation > self.worst_violation {
            self.worst_violation = violation;
            self.witness = Some(at());
        }
    }

    fn eval_failure(&mut self, what: &str, err: impl fmt::Display, at: Witness) {
        if self.worst_violation < f64::INFINITY {
            self.worst_violation = f64::INFINITY;
            self.witness = Some(at);
            self.note = Some(format!("{what}: {err}"));
        }
    }

    fn finish(&mut self, tol: f64) {
        self.passed = self.worst_violation <= tol;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    /// Largest sampled `(|Δb| + |Δσ|_F) / |Δx|` between neighbouring nodes.
    pub lipschitz_estimate: f64,
    pub drift_sup: f64,
    pub sigma_sup: f64,
    pub running_reward_sup: f64,
    pub terminal_reward_sup: f64,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, a: Assumption) -> &CheckResult {
        self.checks
            .iter()
            .find(|c| c.assumption == a)
            .expect("every assumption is checked")
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            write!(
                f,
                "{:<28} {}  worst={}",
                c.assumption.label(),
                if c.passed { "PASS" } else { "FAIL" },
                c.worst_violation
            )?;
            if let Some(w) = &c.witness {
                if !c.passed {
                    write!(f, "  at {w}")?;
                }
            }
            if let Some(n) = &c.note {
                write!(f, "  ({n})")?;
            }
            writeln!(f)?;
        }
        writeln!(f, "lipschitz estimate (b, sigma): {}", self.lipschitz_estimate)?;
        writeln!(f, "sup |b| = {}, sup |sigma| = {}", self.drift_sup, self.sigma_sup)?;
        writeln!(
            f,
            "sup |f| = {}, sup |g| = {}",
            self.running_reward_sup, self.terminal_reward_sup
        )?;
        write!(
            f,
            "note: the box truncation uses reflecting walls; values near the walls are truncation-affected"
        )
    }
}

/// Checks the assumptions at every node and time level of `lattice`.
pub fn validate_problem(spec: &ProblemSpec, lattice: &GridSpec, tol: f64) -> ValidationReport {
    let dim = spec.dim();
    let nd = spec.noise_dim();
    let u = spec.impulses();
    let k = spec.cost_floor();
    let n = lattice.num_nodes();
    let levels = lattice.time_steps() + 1;

    let mut lip = CheckResult::new(Assumption::LipschitzCoefficients);
    let mut bounded = CheckResult::new(Assumption::BoundedRewards);
    let mut floor = CheckResult::new(Assumption::CostFloor);
    let mut subadd = CheckResult::new(Assumption::Subadditivity);
    let mut terminal = CheckResult::new(Assumption::TerminalNoImpulse);

    let witness = |t: f64, x: &[f64], imp: &[&[f64]]| Witness {
        t,
        x: x.to_vec(),
        impulses: imp.iter().map(|v| v.to_vec()).collect(),
    };

    // pairs (i, j, index of xi_i + xi_j) with the sum in U
    let mut pairs = Vec::new();
    for i in 0..u.len() {
        for j in i..u.len() {
            let sum: Vec<f64> = u[i].iter().zip(&u[j]).map(|(a, b)| a + b).collect();
            if let Some(s) = spec.impulse_index(&sum, 1e-12) {
                pairs.push((i, j, s));
            }
        }
    }

    let mut x = vec![0.0; dim];
    let mut costs = vec![0.0; u.len()];
    let mut b = vec![0.0; dim];
    let mut s = vec![0.0; dim * nd];
    let mut drift_sup = 0.0f64;
    let mut sigma_sup = 0.0f64;
    let mut f_sup = 0.0f64;
    let mut g_sup = 0.0f64;
    let mut lipschitz = 0.0f64;

    // coefficients at every node of the current level
    let mut coef: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; n];

    for m in 0..levels {
        let t = lattice.time(m);
        for node in 0..n {
            lattice.coords(node, &mut x);

            coef[node] = match (spec.drift(t, &x, &mut b), spec.sigma(t, &x, &mut s)) {
                (Ok(()), Ok(())) => {
                    drift_sup = drift_sup.max(norm(&b));
                    sigma_sup = sigma_sup.max(norm(&s));
                    Some((b.clone(), s.clone()))
                }
                (Err(e), _) => {
                    lip.eval_failure("drift", e, witness(t, &x, &[]));
                    None
                }
                (_, Err(e)) => {
                    lip.eval_failure("sigma", e, witness(t, &x, &[]));
                    None
                }
            };

            match spec.running_reward(t, &x) {
                Ok(v) => f_sup = f_sup.max(v.abs()),
                Err(e) => bounded.eval_failure("running reward", e, witness(t, &x, &[])),
            }

            let mut all_costs = true;
            for (j, xi) in u.iter().enumerate() {
                match spec.cost(t, &x, xi) {
                    Ok(c) => {
                        costs[j] = c;
                        floor.observe(k - c, || witness(t, &x, &[xi]));
                    }
                    Err(e) => {
                        floor.eval_failure("cost", e, witness(t, &x, &[xi]));
                        all_costs = false;
                    }
                }
            }
            if all_costs {
                for &(i, j, sum) in &pairs {
                    let excess = costs[sum] - costs[i] - costs[j];
                    subadd.observe(excess, || witness(t, &x, &[&u[i], &u[j]]));
                }
            } else {
                subadd.eval_failure("cost", "evaluation failed", witness(t, &x, &[]));
            }

            if m + 1 == levels {
                let gx = match spec.terminal_reward(&x) {
                    Ok(v) => {
                        g_sup = g_sup.max(v.abs());
                        Some(v)
                    }
                    Err(e) => {
                        bounded.eval_failure("terminal reward", e, witness(t, &x, &[]));
                        None
                    }
                };
                if let (Some(gx), true) = (gx, all_costs) {
                    for (j, xi) in u.iter().enumerate() {
                        let y: Vec<f64> = x.iter().zip(xi).map(|(a, b)| a + b).collect();
                        match spec.terminal_reward(&y) {
                            Ok(gy) => terminal.observe(gy - costs[j] - gx, || witness(t, &x, &[xi])),
                            Err(e) => terminal.eval_failure("terminal reward", e, witness(t, &y, &[])),
                        }
                    }
                } else {
                    terminal.eval_failure("terminal data", "evaluation failed", witness(t, &x, &[]));
                }
            }
        }

        // divided differences against the next node along each axis
        let mut idx = vec![0usize; dim];
        for node in 0..n {
            lattice.multi_index(node, &mut idx);
            let Some((b0, s0)) = &coef[node] else { continue };
            for a in 0..dim {
                if idx[a] + 1 >= lattice.nodes_per_axis()[a] {
                    continue;
                }
                let other = node + lattice.strides()[a];
                let Some((b1, s1)) = &coef[other] else { continue };
                let db = diff_norm(b0, b1);
                let ds = diff_norm(s0, s1);
                lipschitz = lipschitz.max((db + ds) / lattice.spacing()[a]);
            }
        }
    }

    for c in [&mut lip, &mut bounded] {
        if c.worst_violation < f64::INFINITY {
            c.worst_violation = 0.0;
        }
    }
    if pairs.is_empty() && subadd.worst_violation == f64::NEG_INFINITY {
        subadd.worst_violation = 0.0;
        subadd.note = Some("no pair of impulses sums to an element of U".into());
    }
    let mut checks = vec![lip, bounded, floor, subadd, terminal];
    for c in &mut checks {
        c.finish(tol);
    }
    ValidationReport {
        checks,
        lipschitz_estimate: lipschitz,
        drift_sup,
        sigma_sup,
        running_reward_sup: f_sup,
        terminal_reward_sup: g_sup,
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::problem::ProblemData;
    use proptest::prelude::*;

    fn spec(g: &str, cost: &str, u: &[f64], floor: f64) -> ProblemSpec {
        ProblemSpec::new(ProblemData {
            dim: 1,
            horizon: 1.0,
            drift: vec![parse_expr("0.5*sin(x0)").unwrap()],
            sigma: vec![vec![parse_expr("0.3").unwrap()]],
            running_reward: parse_expr("0").unwrap(),
            terminal_reward: parse_expr(g).unwrap(),
            cost: parse_expr(cost).unwrap(),
            impulses: u.iter().map(|&x| vec![x]).collect(),
            cost_floor: floor,
        })
        .unwrap()
    }

    fn lattice() -> GridSpec {
        GridSpec::new(vec![-2.0], vec![2.0], vec![41], 10, 1.0).unwrap()
    }

    #[test]
    fn zero_cost_fails_floor_with_witness() {
        let r = validate_problem(&spec("0", "0.0", &[-0.5, 0.5], 0.1), &lattice(), 0.0);
        let c = r.check(Assumption::CostFloor);
        assert!(!c.passed);
        assert!(c.witness.is_some());
        assert!((c.worst_violation - 0.1).abs() < 1e-15);
        assert!(!r.all_passed());
    }

    #[test]
    fn constant_cost_and_zero_terminal_pass() {
        let r = validate_problem(&spec("0", "0.1", &[-0.5, 0.5], 0.1), &lattice(), 0.0);
        assert!(r.all_passed(), "{r}");
        assert!((r.check(Assumption::TerminalNoImpulse).worst_violation + 0.1).abs() < 1e-15);
        // Lipschitz constant of 0.5 sin is 0.5; divided differences sit just below it
        assert!(r.lipschitz_estimate <= 0.5 && r.lipschitz_estimate > 0.49);
    }

    #[test]
    fn subadditivity_pass_and_fail() {
        let ok = validate_problem(&spec("0", "0.1 + abs(xi0)", &[0.2, 0.3, 0.5], 0.1), &lattice(), 0.0);
        let c = ok.check(Assumption::Subadditivity);
        assert!(c.passed);
        // c(0.5) - c(0.2) - c(0.3) = 0.6 - 0.3 - 0.4
        assert!((c.worst_violation + 0.1).abs() < 1e-12);

        let bad = validate_problem(&spec("0", "0.1 + xi0^2", &[0.25, 0.5], 0.1), &lattice(), 0.0);
        let c = bad.check(Assumption::Subadditivity);
        // c(0.5) - 2 c(0.25) = 0.35 - 0.325
        assert!(!c.passed);
        assert!((c.worst_violation - 0.025).abs() < 1e-12);
        assert_eq!(c.witness.as_ref().unwrap().impulses.len(), 2);
    }

    #[test]
    fn hat_payoff_with_cheap_impulses_violates_terminal_condition() {
        let r = validate_problem(&spec("max0(1 - abs(x0))", "0.1", &[-0.5, 0.5], 0.1), &lattice(), 1e-9);
        let c = r.check(Assumption::TerminalNoImpulse);
        assert!(!c.passed);
        assert!((c.worst_violation - 0.4).abs() < 1e-12);
    }

    #[test]
    fn evaluation_errors_are_failures_with_location() {
        let r = validate_problem(&spec("1 / x0", "0.1", &[0.5], 0.1), &lattice(), 0.0);
        let c = r.check(Assumption::BoundedRewards);
        assert!(!c.passed);
        assert_eq!(c.witness.as_ref().unwrap().x, vec![0.0]);
        assert!(c.note.is_some());
    }

    proptest! {
        #[test]
        fn passing_reports_satisfy_every_sampled_inequality(
            base in 0.05..0.5f64, slope in 0.0..0.4f64, amp in 0.0..0.2f64,
        ) {
            let s = spec(&format!("{amp}*cos(x0)"), &format!("{base} + {slope}*abs(xi0)"), &[-0.5, 0.25, 0.5], 0.05);
            let g = GridSpec::new(vec![-1.0], vec![1.0], vec![9], 3, 1.0).unwrap();
            let r1 = validate_problem(&s, &g, 0.0);
            let r2 = validate_problem(&s, &g, 0.0);
            prop_assert_eq!(&r1, &r2);
            if r1.all_passed() {
                for node in 0..g.num_nodes() {
                    let x = g.node_coords(node);
                    for m in 0..=3 {
                        for xi in s.impulses() {
                            prop_assert!(s.cost(g.time(m), &x, xi).unwrap() >= 0.05);
                        }
                    }
                    let gx = s.terminal_reward(&x).unwrap();
                    for xi in s.impulses() {
                        let y = [x[0] + xi[0]];
                        prop_assert!(s.terminal_reward(&y).unwrap() - s.cost(1.0, &x, xi).unwrap() <= gx);
                    }
                }
            }
        }
    }
}
