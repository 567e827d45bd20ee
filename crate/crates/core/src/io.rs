//! Artifact formats: value/policy/cascade/path CSVs and the run manifest.
//!
//! Numbers are written with Rust's shortest round-trip `Display` form, so a
//! value read back is bit-identical to the value written. Lines starting with
//! `#` are comments and carry the run identifier.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::grid::{GridSpec, ValueField};
use crate::montecarlo::SimReport;
use crate::policy::{Action, Policy};
use crate::problem::ProblemSpec;
use crate::solver::CascadeStep;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("artifact does not match the grid: {0}")]
    GridMismatch(String),
}

/// Shortest round-trip decimal; exponent form for very small or large magnitudes.
pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn join_nums(v: &[f64]) -> String {
    v.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(",")
}

fn coord_header(dim: usize) -> String {
    (0..dim).map(|a| format!("x{a}")).collect::<Vec<_>>().join(",")
}

fn run_line(w: &mut impl Write, run_id: Option<&str>) -> io::Result<()> {
    if let Some(id) = run_id {
        writeln!(w, "# run {id}")?;
    }
    Ok(())
}

/// `t,x0..,value`, time-major, nodes in lexicographic order.
pub fn write_value_csv(
    w: &mut impl Write,
    fields: &[ValueField],
    times: &[f64],
    grid: &GridSpec,
    run_id: Option<&str>,
) -> io::Result<()> {
    run_line(w, run_id)?;
    writeln!(w, "t,{},value", coord_header(grid.dim()))?;
    let mut x = vec![0.0; grid.dim()];
    let mut line = String::new();
    for (f, &t) in fields.iter().zip(times) {
        for (node, v) in f.values.iter().enumerate() {
            grid.coords(node, &mut x);
            line.clear();
            let _ = write!(line, "{},{},{}", fmt_num(t), join_nums(&x), fmt_num(*v));
            writeln!(w, "{line}")?;
        }
    }
    Ok(())
}

/// Parsed value CSV: times and one value vector per level.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub dim: usize,
    pub times: Vec<f64>,
    pub coords: Vec<Vec<f64>>,
    pub levels: Vec<Vec<f64>>,
}

fn data_lines(r: impl BufRead) -> io::Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push((i + 1, trimmed.to_string()));
    }
    Ok(out)
}

pub fn read_value_csv(r: impl BufRead) -> Result<ValueTable, ArtifactError> {
    let lines = data_lines(r)?;
    let (hline, header) = lines.first().ok_or(ArtifactError::Parse {
        line: 0,
        msg: "empty value file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "t" || cols[cols.len() - 1] != "value" {
        return Err(ArtifactError::Parse {
            line: *hline,
            msg: format!("unexpected header `{header}`"),
        });
    }
    let dim = cols.len() - 2;
    let mut table = ValueTable {
        dim,
        times: Vec::new(),
        coords: Vec::new(),
        levels: Vec::new(),
    };
    for (line, text) in &lines[1..] {
        let nums: Result<Vec<f64>, _> = text.split(',').map(|c| c.trim().parse::<f64>()).collect();
        let nums = nums.map_err(|_| ArtifactError::Parse {
            line: *line,
            msg: format!("malformed row `{text}`"),
        })?;
        if nums.len() != dim + 2 {
            return Err(ArtifactError::Parse {
                line: *line,
                msg: format!("expected {} columns, got {}", dim + 2, nums.len()),
            });
        }
        let t = nums[0];
        if table.times.last() != Some(&t) {
            table.times.push(t);
            table.levels.push(Vec::new());
        }
        let level = table.levels.len() - 1;
        if level == 0 {
            table.coords.push(nums[1..=dim].to_vec());
        }
        table.levels[level].push(nums[dim + 1]);
    }
    Ok(table)
}

impl ValueTable {
    /// Checks the table against `grid` and returns its fields.
    pub fn into_fields(self, grid: &GridSpec) -> Result<(Vec<ValueField>, Vec<f64>), ArtifactError> {
        if self.dim != grid.dim() {
            return Err(ArtifactError::GridMismatch(format!(
                "file has dimension {}, grid has {}",
                self.dim,
                grid.dim()
            )));
        }
        if self.levels.len() != grid.time_steps() + 1 {
            return Err(ArtifactError::GridMismatch(format!(
                "file has {} time levels, grid has {}",
                self.levels.len(),
                grid.time_steps() + 1
            )));
        }
        let n = grid.num_nodes();
        if self.coords.len() != n || self.levels.iter().any(|l| l.len() != n) {
            return Err(ArtifactError::GridMismatch(format!(
                "file has {} nodes per level, grid has {n}",
                self.coords.len()
            )));
        }
        for (m, &t) in self.times.iter().enumerate() {
            if (t - grid.time(m)).abs() > 1e-9 * grid.horizon() {
                return Err(ArtifactError::GridMismatch(format!(
                    "level {m} has time {t}, grid expects {}",
                    grid.time(m)
                )));
            }
        }
        for (node, c) in self.coords.iter().enumerate() {
            let x = grid.node_coords(node);
            let scale: f64 = grid.spacing().iter().copied().fold(f64::INFINITY, f64::min);
            if c.iter().zip(&x).any(|(a, b)| (a - b).abs() > 1e-9 * scale) {
                return Err(ArtifactError::GridMismatch(format!(
                    "node {node} at {c:?}, grid expects {x:?}"
                )));
            }
        }
        let times = self.times;
        let fields = self
            .levels
            .into_iter()
            .enumerate()
            .map(|(m, v)| ValueField::new(m, v))
            .collect();
        Ok((fields, times))
    }
}

/// `t,x0..,action,impulse_index,xi0..`; continue rows leave the impulse columns empty.
pub fn write_policy_csv(
    w: &mut impl Write,
    policy: &Policy,
    spec: &ProblemSpec,
    grid: &GridSpec,
    run_id: Option<&str>,
) -> io::Result<()> {
    run_line(w, run_id)?;
    let dim = grid.dim();
    let xi_header = (0..dim).map(|a| format!("xi{a}")).collect::<Vec<_>>().join(",");
    writeln!(w, "t,{},action,impulse_index,{xi_header}", coord_header(dim))?;
    let empty = vec![""; dim].join(",");
    let mut x = vec![0.0; dim];
    for (m, level) in policy.actions.iter().enumerate() {
        let t = fmt_num(grid.time(m));
        for (node, a) in level.iter().enumerate() {
            grid.coords(node, &mut x);
            match a {
                Action::Continue => writeln!(w, "{t},{},continue,,{empty}", join_nums(&x))?,
                Action::Impulse(j) => writeln!(
                    w,
                    "{t},{},impulse,{j},{}",
                    join_nums(&x),
                    join_nums(&spec.impulses()[*j])
                )?,
            }
        }
    }
    Ok(())
}

pub fn write_cascade_csv(w: &mut impl Write, history: &[CascadeStep], run_id: Option<&str>) -> io::Result<()> {
    run_line(w, run_id)?;
    writeln!(w, "n,sup_increment,min_increment")?;
    for s in history {
        writeln!(
            w,
            "{},{},{}",
            s.n,
            fmt_num(s.sup_increment),
            fmt_num(s.min_increment)
        )?;
    }
    Ok(())
}

pub fn write_paths_csv(w: &mut impl Write, report: &SimReport, run_id: Option<&str>) -> io::Result<()> {
    run_line(w, run_id)?;
    writeln!(w, "path,J,impulse_count,total_cost,left_trust_region")?;
    for (i, p) in report.per_path.iter().enumerate() {
        writeln!(
            w,
            "{i},{},{},{},{}",
            fmt_num(p.gain),
            p.impulse_count,
            fmt_num(p.total_cost),
            u8::from(p.flagged)
        )?;
    }
    Ok(())
}

pub fn sim_summary(report: &SimReport) -> String {
    let hist = report
        .impulse_histogram
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let mut s = String::new();
    let _ = writeln!(s, "estimate = {}", fmt_num(report.mean));
    let _ = writeln!(s, "stderr = {}", fmt_num(report.stderr));
    let _ = writeln!(s, "paths = {}", report.paths);
    let _ = writeln!(s, "mean_impulses = {}", fmt_num(report.mean_impulses));
    let _ = writeln!(s, "mean_total_cost = {}", fmt_num(report.mean_total_cost));
    let _ = writeln!(s, "impulse_histogram = {hist}");
    let _ = writeln!(s, "left_trust_region = {}", report.flagged);
    let _ = writeln!(s, "rng = {}", report.rng);
    let _ = writeln!(s, "seed = {}", report.seed);
    s
}

/// Ordered `key = value` text document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, ArtifactError> {
        let mut m = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ArtifactError::Parse {
                line: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn set_grid(&mut self, grid: &GridSpec) {
        self.set("grid.lo", join_nums(grid.lo()));
        self.set("grid.hi", join_nums(grid.hi()));
        let nodes: Vec<String> = grid.nodes_per_axis().iter().map(|n| n.to_string()).collect();
        self.set("grid.nodes", nodes.join(","));
        self.set("grid.time_steps", grid.time_steps());
        self.set("grid.horizon", fmt_num(grid.horizon()));
    }

    pub fn grid(&self) -> Result<GridSpec, ArtifactError> {
        let need = |k: &str| {
            self.get(k).ok_or(ArtifactError::Parse {
                line: 0,
                msg: format!("manifest lacks `{k}`"),
            })
        };
        let bad = |k: &str| ArtifactError::Parse {
            line: 0,
            msg: format!("manifest entry `{k}` is malformed"),
        };
        let nums = |k: &str| -> Result<Vec<f64>, ArtifactError> {
            need(k)?
                .split(',')
                .map(|c| c.trim().parse::<f64>().map_err(|_| bad(k)))
                .collect()
        };
        let nodes: Vec<usize> = need("grid.nodes")?
            .split(',')
            .map(|c| c.trim().parse::<usize>().map_err(|_| bad("grid.nodes")))
            .collect::<Result<_, _>>()?;
        let steps: usize = need("grid.time_steps")?
            .parse()
            .map_err(|_| bad("grid.time_steps"))?;
        let horizon: f64 = need("grid.horizon")?.parse().map_err(|_| bad("grid.horizon"))?;
        GridSpec::new(nums("grid.lo")?, nums("grid.hi")?, nodes, steps, horizon)
            .map_err(|e| ArtifactError::GridMismatch(e.to_string()))
    }
}
