//! Problem data: coefficients, impulse set and cost floor.

use std::collections::BTreeMap;

use crate::error::ProblemError;
use crate::expr::{parse_expr, EvalError, EvalPoint, Expr, Var};

/// A finite-horizon impulse control problem on `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    dim: usize,
    horizon: f64,
    drift: Vec<Expr>,
    /// Row-major `dim x noise_dim`.
    sigma: Vec<Expr>,
    noise_dim: usize,
    running_reward: Expr,
    terminal_reward: Expr,
    cost: Expr,
    impulses: Vec<Vec<f64>>,
    cost_floor: f64,
}

/// Builder-style inputs for [`ProblemSpec::new`].
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub dim: usize,
    pub horizon: f64,
    pub drift: Vec<Expr>,
    pub sigma: Vec<Vec<Expr>>,
    pub running_reward: Expr,
    pub terminal_reward: Expr,
    pub cost: Expr,
    pub impulses: Vec<Vec<f64>>,
    pub cost_floor: f64,
}

impl ProblemSpec {
    pub fn new(data: ProblemData) -> Result<Self, ProblemError> {
        let ProblemData {
            dim,
            horizon,
            drift,
            sigma,
            running_reward,
            terminal_reward,
            cost,
            impulses,
            cost_floor,
        } = data;
        if dim == 0 {
            return Err(ProblemError::Invalid("dim must be positive".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(ProblemError::Invalid(format!(
                "horizon must be a positive finite time, got {horizon}"
            )));
        }
        if !(cost_floor.is_finite() && cost_floor > 0.0) {
            return Err(ProblemError::Invalid(format!(
                "cost_floor must be positive, got {cost_floor}"
            )));
        }
        if drift.len() != dim {
            return Err(ProblemError::Invalid(format!(
                "drift has {} components, expected {dim}",
                drift.len()
            )));
        }
        if sigma.len() != dim {
            return Err(ProblemError::Invalid(format!(
                "sigma has {} rows, expected {dim}",
                sigma.len()
            )));
        }
        let noise_dim = sigma.first().map_or(0, Vec::len);
        if noise_dim == 0 || sigma.iter().any(|row| row.len() != noise_dim) {
            return Err(ProblemError::Invalid(
                "sigma must be a non-empty rectangular matrix".into(),
            ));
        }
        if impulses.is_empty() {
            return Err(ProblemError::Invalid("impulse set is empty".into()));
        }
        for (m, xi) in impulses.iter().enumerate() {
            if xi.len() != dim {
                return Err(ProblemError::Invalid(format!(
                    "impulse {m} has {} components, expected {dim}",
                    xi.len()
                )));
            }
            if xi.iter().any(|v| !v.is_finite()) {
                return Err(ProblemError::Invalid(format!("impulse {m} is not finite")));
            }
        }

        let check = |name: &str, e: &Expr, allow_xi: bool| -> Result<(), ProblemError> {
            let mut bad = None;
            e.for_each_var(&mut |v| match v {
                Var::State(i) if i >= dim => bad = Some(format!("x{i}")),
                Var::Impulse(i) if !allow_xi || i >= dim => bad = Some(format!("xi{i}")),
                _ => {}
            });
            match bad {
                Some(v) => Err(ProblemError::Invalid(format!(
                    "{name} references variable {v}, which is not available there"
                ))),
                None => Ok(()),
            }
        };
        for (i, e) in drift.iter().enumerate() {
            check(&format!("drift.{i}"), e, false)?;
        }
        for (i, row) in sigma.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                check(&format!("sigma.{i}.{j}"), e, false)?;
            }
        }
        check("running_reward", &running_reward, false)?;
        check("terminal_reward", &terminal_reward, false)?;
        check("cost", &cost, true)?;

        Ok(Self {
            dim,
            horizon,
            drift,
            sigma: sigma.into_iter().flatten().collect(),
            noise_dim,
            running_reward,
            terminal_reward,
            cost,
            impulses,
            cost_floor,
        })
    }

    /// Parses the flat `key = value` problem file format.
    pub fn from_config_str(text: &str) -> Result<Self, ProblemError> {
        parse_config(text)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn impulses(&self) -> &[Vec<f64>] {
        &self.impulses
    }

    pub fn cost_floor(&self) -> f64 {
        self.cost_floor
    }

    pub fn drift_expr(&self, i: usize) -> &Expr {
        &self.drift[i]
    }

    pub fn sigma_expr(&self, i: usize, j: usize) -> &Expr {
        &self.sigma[i * self.noise_dim + j]
    }

    pub fn running_reward_expr(&self) -> &Expr {
        &self.running_reward
    }

    pub fn terminal_reward_expr(&self) -> &Expr {
        &self.terminal_reward
    }

    pub fn cost_expr(&self) -> &Expr {
        &self.cost
    }

    /// Largest absolute impulse component along each axis.
    pub fn max_impulse_radius(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|a| self.impulses.iter().map(|xi| xi[a].abs()).fold(0.0, f64::max))
            .collect()
    }

    pub fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        let p = EvalPoint::new(t, x);
        for (o, e) in out.iter_mut().zip(&self.drift) {
            *o = e.eval(&p)?;
        }
        Ok(())
    }

    /// Fills `out` (row-major `dim x noise_dim`) with sigma(t, x).
    pub fn sigma(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        let p = EvalPoint::new(t, x);
        for (o, e) in out.iter_mut().zip(&self.sigma) {
            *o = e.eval(&p)?;
        }
        Ok(())
    }

    pub fn running_reward(&self, t: f64, x: &[f64]) -> Result<f64, EvalError> {
        self.running_reward.eval(&EvalPoint::new(t, x))
    }

    pub fn terminal_reward(&self, x: &[f64]) -> Result<f64, EvalError> {
        self.terminal_reward.eval(&EvalPoint::new(self.horizon, x))
    }

    pub fn cost(&self, t: f64, x: &[f64], xi: &[f64]) -> Result<f64, EvalError> {
        self.cost.eval(&EvalPoint::with_impulse(t, x, xi))
    }

    /// Index of `xi` in the impulse set, matched componentwise within `tol`.
    pub fn impulse_index(&self, xi: &[f64], tol: f64) -> Option<usize> {
        self.impulses
            .iter()
            .position(|u| u.iter().zip(xi).all(|(a, b)| (a - b).abs() <= tol))
    }

    /// Same problem with running and terminal rewards replaced.
    pub fn with_rewards(&self, running: Expr, terminal: Expr) -> Result<Self, ProblemError> {
        let mut data = self.to_data();
        data.running_reward = running;
        data.terminal_reward = terminal;
        Self::new(data)
    }

    pub fn with_cost(&self, cost: Expr) -> Result<Self, ProblemError> {
        let mut data = self.to_data();
        data.cost = cost;
        Self::new(data)
    }

    pub fn to_data(&self) -> ProblemData {
        ProblemData {
            dim: self.dim,
            horizon: self.horizon,
            drift: self.drift.clone(),
            sigma: self
                .sigma
                .chunks(self.noise_dim)
                .map(<[Expr]>::to_vec)
                .collect(),
            running_reward: self.running_reward.clone(),
            terminal_reward: self.terminal_reward.clone(),
            cost: self.cost.clone(),
            impulses: self.impulses.clone(),
            cost_floor: self.cost_floor,
        }
    }

    /// Renders the problem back into the config format.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("dim = {}\n", self.dim));
        s.push_str(&format!("horizon = {}\n", self.horizon));
        for (i, e) in self.drift.iter().enumerate() {
            s.push_str(&format!("drift.{i} = {e}\n"));
        }
        for i in 0..self.dim {
            for j in 0..self.noise_dim {
                s.push_str(&format!("sigma.{i}.{j} = {}\n", self.sigma_expr(i, j)));
            }
        }
        s.push_str(&format!("running_reward = {}\n", self.running_reward));
        s.push_str(&format!("terminal_reward = {}\n", self.terminal_reward));
        s.push_str(&format!("cost = {}\n", self.cost));
        for (m, xi) in self.impulses.iter().enumerate() {
            let v: Vec<String> = xi.iter().map(|c| c.to_string()).collect();
            s.push_str(&format!("impulse.{m} = {}\n", v.join(", ")));
        }
        s.push_str(&format!("cost_floor = {}\n", self.cost_floor));
        s
    }
}

fn config_err(line: usize, msg: impl Into<String>) -> ProblemError {
    ProblemError::Config {
        line,
        msg: msg.into(),
    }
}

fn parse_config(text: &str) -> Result<ProblemSpec, ProblemError> {
    let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| config_err(line_no, format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(config_err(line_no, "empty key"));
        }
        if entries
            .insert(key.clone(), (line_no, value.trim().to_string()))
            .is_some()
        {
            return Err(config_err(line_no, format!("duplicate key `{key}`")));
        }
    }

    let take = |entries: &mut BTreeMap<String, (usize, String)>, key: &str| {
        entries
            .remove(key)
            .ok_or_else(|| ProblemError::MissingKey(key.to_string()))
    };
    let number = |(line, v): &(usize, String), key: &str| -> Result<f64, ProblemError> {
        v.parse::<f64>()
            .map_err(|_| config_err(*line, format!("`{key}` must be a number, got `{v}`")))
    };
    let expression = |(line, v): &(usize, String), key: &str| -> Result<Expr, ProblemError> {
        parse_expr(v).map_err(|e| config_err(*line, format!("`{key}`: {e}")))
    };

    let dim_entry = take(&mut entries, "dim")?;
    let dim: usize = dim_entry
        .1
        .parse()
        .ok()
        .filter(|&d| d > 0)
        .ok_or_else(|| config_err(dim_entry.0, "`dim` must be a positive integer"))?;
    let horizon = number(&take(&mut entries, "horizon")?, "horizon")?;
    let cost_floor = number(&take(&mut entries, "cost_floor")?, "cost_floor")?;
    let running_reward = expression(&take(&mut entries, "running_reward")?, "running_reward")?;
    let terminal_reward = expression(&take(&mut entries, "terminal_reward")?, "terminal_reward")?;
    let cost = expression(&take(&mut entries, "cost")?, "cost")?;

    let mut drift = Vec::with_capacity(dim);
    for i in 0..dim {
        let key = format!("drift.{i}");
        drift.push(expression(&take(&mut entries, &key)?, &key)?);
    }

    let mut sigma_entries: BTreeMap<(usize, usize), Expr> = BTreeMap::new();
    let mut impulse_entries: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (key, entry) in std::mem::take(&mut entries) {
        let line = entry.0;
        if let Some(rest) = key.strip_prefix("sigma.") {
            let idx = rest
                .split_once('.')
                .and_then(|(i, j)| Some((i.parse::<usize>().ok()?, j.parse::<usize>().ok()?)));
            match idx {
                Some((i, j)) if i < dim => {
                    sigma_entries.insert((i, j), expression(&entry, &key)?);
                }
                _ => return Err(config_err(line, format!("invalid sigma key `{key}`"))),
            }
        } else if let Some(rest) = key.strip_prefix("impulse.") {
            let m: usize = rest
                .parse()
                .map_err(|_| config_err(line, format!("invalid impulse key `{key}`")))?;
            let v: Result<Vec<f64>, _> = entry.1.split(',').map(|c| c.trim().parse::<f64>()).collect();
            let v = v.map_err(|_| {
                config_err(line, format!("`{key}` must be a comma-separated vector"))
            })?;
            if v.len() != dim {
                return Err(config_err(
                    line,
                    format!("`{key}` has {} components, expected {dim}", v.len()),
                ));
            }
            impulse_entries.insert(m, v);
        } else {
            return Err(config_err(line, format!("unknown key `{key}`")));
        }
    }

    // Missing sigma entries are zero; the noise dimension is the widest column seen.
    let noise_dim = sigma_entries.keys().map(|&(_, j)| j + 1).max().unwrap_or(1);
    let sigma = (0..dim)
        .map(|i| {
            (0..noise_dim)
                .map(|j| {
                    sigma_entries
                        .remove(&(i, j))
                        .unwrap_or(Expr::Const(0.0))
                })
                .collect()
        })
        .collect();
    if impulse_entries.is_empty() {
        return Err(ProblemError::MissingKey("impulse.0".into()));
    }

    ProblemSpec::new(ProblemData {
        dim,
        horizon,
        drift,
        sigma,
        running_reward,
        terminal_reward,
        cost,
        impulses: impulse_entries.into_values().collect(),
        cost_floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HAT: &str = "\
# hat payoff
dim = 1
horizon = 1
drift.0 = 0
sigma.0.0 = 0.5
running_reward = 0
terminal_reward = max0(1 - abs(x0))
cost = 0.1
impulse.0 = -0.5
impulse.1 = 0.5
cost_floor = 0.1
";

    #[test]
    fn parses_config() {
        let p = ProblemSpec::from_config_str(HAT).unwrap();
        assert_eq!(p.dim(), 1);
        assert_eq!(p.noise_dim(), 1);
        assert_eq!(p.impulses(), &[vec![-0.5], vec![0.5]]);
        assert_eq!(p.terminal_reward(&[0.25]).unwrap(), 0.75);
        assert_eq!(p.cost(0.3, &[1.0], &[0.5]).unwrap(), 0.1);
        let mut s = [0.0];
        p.sigma(0.0, &[0.0], &mut s).unwrap();
        assert_eq!(s, [0.5]);
        assert_eq!(p.max_impulse_radius(), vec![0.5]);
    }

    #[test]
    fn config_round_trip() {
        let p = ProblemSpec::from_config_str(HAT).unwrap();
        let again = ProblemSpec::from_config_str(&p.to_config_string()).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn missing_key_is_named() {
        let text = HAT.replace("horizon = 1\n", "");
        match ProblemSpec::from_config_str(&text) {
            Err(ProblemError::MissingKey(k)) => assert_eq!(k, "horizon"),
            other => panic!("unexpected {other:?}"),
        }
        let text = HAT.replace("drift.0 = 0\n", "");
        assert!(matches!(
            ProblemSpec::from_config_str(&text),
            Err(ProblemError::MissingKey(k)) if k == "drift.0"
        ));
    }

    #[test]
    fn unknown_and_duplicate_keys_are_errors() {
        let text = format!("{HAT}colour = blue\n");
        assert!(matches!(
            ProblemSpec::from_config_str(&text),
            Err(ProblemError::Config { line: 12, .. })
        ));
        let text = format!("{HAT}cost = 0.2\n");
        assert!(matches!(
            ProblemSpec::from_config_str(&text),
            Err(ProblemError::Config { .. })
        ));
    }

    #[test]
    fn structural_invariants() {
        let bad_floor = HAT.replace("cost_floor = 0.1", "cost_floor = 0");
        assert!(matches!(
            ProblemSpec::from_config_str(&bad_floor),
            Err(ProblemError::Invalid(_))
        ));
        let bad_var = HAT.replace("running_reward = 0", "running_reward = x1");
        assert!(matches!(
            ProblemSpec::from_config_str(&bad_var),
            Err(ProblemError::Invalid(_))
        ));
        let xi_in_g = HAT.replace("max0(1 - abs(x0))", "xi0");
        assert!(ProblemSpec::from_config_str(&xi_in_g).is_err());
        let bad_expr = HAT.replace("cost = 0.1", "cost = 0.1 +");
        assert!(matches!(
            ProblemSpec::from_config_str(&bad_expr),
            Err(ProblemError::Config { line: 8, .. })
        ));
        let wrong_len = HAT.replace("impulse.1 = 0.5", "impulse.1 = 0.5, 1");
        assert!(ProblemSpec::from_config_str(&wrong_len).is_err());
    }

    #[test]
    fn missing_sigma_entries_default_to_zero() {
        let text = "dim = 2\nhorizon = 1\ndrift.0 = 0\ndrift.1 = 0\nsigma.1.1 = 0.3\n\
                    running_reward = 0\nterminal_reward = 0\ncost = 1\nimpulse.0 = 1, 0\ncost_floor = 1\n";
        let p = ProblemSpec::from_config_str(text).unwrap();
        assert_eq!(p.noise_dim(), 2);
        let mut s = [9.0; 4];
        p.sigma(0.0, &[0.0, 0.0], &mut s).unwrap();
        assert_eq!(s, [0.0, 0.0, 0.0, 0.3]);
    }
}
