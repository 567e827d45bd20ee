use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use impulse_qvi::io::{
    fmt_num, sim_summary, write_cascade_csv, write_paths_csv, write_policy_csv, write_value_csv,
    Manifest,
};
use impulse_qvi::montecarlo::{default_impulse_cap, RNG_NAME};
use impulse_qvi::solver::Discretization;
use impulse_qvi::{
    default_contact_tol, dpp_restart_check, extract_policy, feynman_kac_v0, simulate_paths,
    validate_problem, GridSpec, ProblemSpec, SimConfig, SolveConfig, SolveError,
};

use crate::run_dir::{self, LoadedRun};
use crate::{Failure, GridArgs, SimulateArgs, SolveArgs};

const BOUNDARY_NOTE: &str =
    "reflecting walls; values within the impulse radius of the walls are truncation-affected";

fn broadcast<T: Copy>(v: &[T], dim: usize, flag: &str) -> Result<Vec<T>, Failure> {
    match v.len() {
        1 => Ok(vec![v[0]; dim]),
        n if n == dim => Ok(v.to_vec()),
        n => Err(Failure::usage(format!(
            "--{flag} has {n} entries, the problem has dimension {dim}"
        ))),
    }
}

/// Grid from flags; `defaults` fills in whatever is missing when given.
fn build_grid(
    args: &GridArgs,
    spec: &ProblemSpec,
    defaults: Option<(f64, f64, usize, u64)>,
) -> Result<GridSpec, Failure> {
    let dim = spec.dim();
    let missing = |flag: &str| Failure::usage(format!("--{flag} is required"));
    let pick_f = |v: &Option<Vec<f64>>, d: Option<f64>, flag: &str| match (v, d) {
        (Some(v), _) => broadcast(v, dim, flag),
        (None, Some(d)) => Ok(vec![d; dim]),
        (None, None) => Err(missing(flag)),
    };
    let lo = pick_f(&args.grid_lo, defaults.map(|d| d.0), "grid-lo")?;
    let hi = pick_f(&args.grid_hi, defaults.map(|d| d.1), "grid-hi")?;
    let nodes = match (&args.nodes, defaults) {
        (Some(v), _) => broadcast(v, dim, "nodes")?,
        (None, Some(d)) => vec![d.2; dim],
        (None, None) => return Err(missing("nodes")),
    };
    let steps = match (args.time_steps, defaults) {
        (Some(m), _) => m,
        (None, Some(d)) => d.3,
        (None, None) => return Err(missing("time-steps")),
    };
    GridSpec::new(lo, hi, nodes, steps as usize, spec.horizon()).map_err(Failure::usage)
}

pub fn validate(config: &Path, grid: &GridArgs, tol: f64) -> Result<(), Failure> {
    let bytes = run_dir::read_bytes(config)?;
    let spec = run_dir::parse_problem(config, &bytes)?;
    let lattice = build_grid(grid, &spec, Some((-2.0, 2.0, 21, 10)))?;
    let report = validate_problem(&spec, &lattice, tol);
    println!("{report}");
    if report.all_passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.assumption.label())
            .collect();
        Err(Failure::domain(format!("failed: {}", failed.join(", "))))
    }
}

fn solve_failure(e: SolveError) -> Failure {
    match e {
        SolveError::NoConvergence { .. } => Failure::domain(e),
        other => Failure::usage(other),
    }
}

fn solve_parameters(grid: &GridSpec, cfg: &SolveConfig, no_impulses: bool) -> Manifest {
    let mut m = Manifest::new();
    m.set_grid(grid);
    m.set("solve.theta", fmt_num(cfg.theta));
    m.set("solve.cascade_tol", fmt_num(cfg.cascade_tol));
    m.set("solve.cascade_max", cfg.cascade_max);
    m.set("solve.obstacle_tol", fmt_num(cfg.obstacle_tol));
    m.set("solve.linear_tol", fmt_num(cfg.linear_tol));
    m.set("solve.max_sweeps", cfg.max_sweeps);
    m.set("solve.relaxation", fmt_num(cfg.relaxation));
    m.set("solve.mode", if no_impulses { "no-impulses" } else { "qvi" });
    m
}

pub fn solve(args: &SolveArgs) -> Result<(), Failure> {
    let bytes = run_dir::read_bytes(&args.config)?;
    let spec = run_dir::parse_problem(&args.config, &bytes)?;
    let grid = build_grid(&args.grid, &spec, None)?;
    let cfg = SolveConfig {
        theta: args.theta,
        obstacle_tol: args.obstacle_tol,
        cascade_tol: args.cascade_tol,
        cascade_max: args.cascade_max,
        linear_tol: args.obstacle_tol,
        max_sweeps: args.max_sweeps,
        relaxation: args.relaxation,
    };
    cfg.validate().map_err(Failure::usage)?;
    if let Some(r) = args.restart_level {
        if r > grid.time_steps() {
            return Err(Failure::usage(format!(
                "--restart-level {r} exceeds the {} time steps",
                grid.time_steps()
            )));
        }
    }

    let report = validate_problem(&spec, &grid, 1e-12);
    if !report.all_passed() {
        eprintln!("{report}");
        if !args.force {
            return Err(Failure::domain(
                "assumption checks failed; rerun with --force to solve anyway",
            ));
        }
        eprintln!("warning: solving despite failed assumption checks (--force)");
    }

    let mut manifest = solve_parameters(&grid, &cfg, args.no_impulses);
    let id = run_dir::run_id(&bytes, &manifest.render());
    manifest.set("version", env!("CARGO_PKG_VERSION"));
    manifest.set("run_id", &id);
    manifest.set("config_hash", run_dir::sha256_hex(&bytes));
    manifest.set("problem_path", args.config.display());
    manifest.set("validation", if report.all_passed() { "passed" } else { "failed (forced)" });
    manifest.set("boundary", BOUNDARY_NOTE);
    manifest.set("created", chrono::Utc::now().to_rfc3339());

    std::fs::create_dir_all(&args.out)
        .map_err(|e| Failure::usage(format!("cannot create {}: {e}", args.out.display())))?;
    let out = |name: &str| args.out.join(name);
    run_dir::write_text(&out(run_dir::PROBLEM), std::str::from_utf8(&bytes).unwrap_or_default())?;

    let disc = Discretization::new(&spec, &grid).map_err(solve_failure)?;
    let solved = if args.no_impulses {
        disc.no_impulse(&cfg)
    } else {
        disc.cascade(&cfg)
    };
    let result = match solved {
        Ok(r) => r,
        Err(e) => {
            manifest.set("status", "failed");
            manifest.set("error", &e);
            run_dir::write_text(&out(run_dir::MANIFEST), &manifest.render())?;
            return Err(solve_failure(e));
        }
    };

    let path = out(run_dir::VALUE);
    let mut w = run_dir::create(&path)?;
    write_value_csv(&mut w, &result.fields, &result.times, &grid, Some(&id))
        .map_err(Failure::usage)?;
    run_dir::finish(w, &path)?;

    let path = out(run_dir::CASCADE);
    let mut w = run_dir::create(&path)?;
    write_cascade_csv(&mut w, &result.history, Some(&id)).map_err(Failure::usage)?;
    run_dir::finish(w, &path)?;

    let residuals = disc.residuals(&result);
    let path = out(run_dir::RESIDUALS);
    let mut w = run_dir::create(&path)?;
    write_residuals(&mut w, &residuals, &disc, &result.times, &id).map_err(Failure::usage)?;
    run_dir::finish(w, &path)?;

    let trust = grid.trust_region(&spec.max_impulse_radius());
    let join = |v: &[f64]| v.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(",");
    manifest.set("trust_region.lo", join(&trust.lo));
    manifest.set("trust_region.hi", join(&trust.hi));
    manifest.set("cascade.n_used", result.n_used);
    manifest.set("cascade.converged", result.converged);
    if let Some(last) = result.history.last() {
        manifest.set("cascade.last_increment", fmt_num(last.sup_increment));
    }
    manifest.set("residual_summary", fmt_num(result.residual_summary));
    manifest.set("value_sup", fmt_num(result.sup_norm()));
    manifest.set("value_bound", fmt_num(disc.value_bound()));
    if let Some(r) = args.restart_level {
        let d = dpp_restart_check(&result, r, &spec, &grid, &cfg).map_err(solve_failure)?;
        manifest.set("restart.level", r);
        manifest.set("restart.discrepancy", fmt_num(d));
        println!("restart discrepancy at level {r}: {}", fmt_num(d));
    }
    manifest.set("status", if result.converged { "converged" } else { "not-converged" });
    run_dir::write_text(&out(run_dir::MANIFEST), &manifest.render())?;

    println!("run {id}");
    println!(
        "cascade iterations: {}{}",
        result.n_used,
        if result.converged { "" } else { " (not converged)" }
    );
    println!("residual summary: {}", fmt_num(result.residual_summary));
    println!(
        "sup |V| = {} (bound {})",
        fmt_num(result.sup_norm()),
        fmt_num(disc.value_bound())
    );
    if trust.is_empty() {
        eprintln!("warning: the trust region is empty; widen the box");
    }
    if result.converged {
        Ok(())
    } else {
        Err(Failure::domain(format!(
            "cascade did not converge in {} iterations; artifacts are flagged `status = not-converged`",
            result.n_used
        )))
    }
}

fn write_residuals(
    w: &mut impl Write,
    res: &impulse_qvi::solver::Residuals,
    disc: &Discretization,
    times: &[f64],
    id: &str,
) -> std::io::Result<()> {
    let grid = disc.grid();
    let dim = grid.dim();
    let coords = (0..dim).map(|a| format!("x{a}")).collect::<Vec<_>>().join(",");
    writeln!(w, "# run {id}")?;
    writeln!(w, "# summary {}", fmt_num(res.summary))?;
    writeln!(w, "t,{coords},pde,obstacle,complementarity,trusted")?;
    let mut x = vec![0.0; dim];
    let mut line = String::new();
    for (m, t) in times.iter().enumerate().take(res.pde.len()) {
        for node in 0..grid.num_nodes() {
            grid.coords(node, &mut x);
            line.clear();
            let _ = write!(line, "{}", fmt_num(*t));
            for v in &x {
                let _ = write!(line, ",{}", fmt_num(*v));
            }
            let _ = write!(
                line,
                ",{},{},{},{}",
                fmt_num(res.pde[m][node]),
                fmt_num(res.obstacle[m][node]),
                fmt_num(res.complementarity[m][node]),
                u8::from(disc.trusted(node) && !grid.is_boundary(node))
            );
            writeln!(w, "{line}")?;
        }
    }
    Ok(())
}

pub fn policy(run: &Path, contact_tol: Option<f64>, out: Option<&Path>) -> Result<(), Failure> {
    let loaded = run_dir::load(run)?;
    let tol = contact_tol.unwrap_or_else(|| default_contact_tol(&loaded.result));
    if !(tol.is_finite() && tol >= 0.0) {
        return Err(Failure::usage("--contact-tol must be a non-negative number"));
    }
    let p = extract_policy(&loaded.result, &loaded.spec, &loaded.grid, tol).map_err(solve_failure)?;
    let path = out.map_or_else(|| run.join(run_dir::POLICY), Path::to_path_buf);
    let mut w = run_dir::create(&path)?;
    write_policy_csv(&mut w, &p, &loaded.spec, &loaded.grid, Some(&loaded.run_id))
        .map_err(Failure::usage)?;
    run_dir::finish(w, &path)?;
    println!("contact tolerance: {}", fmt_num(tol));
    println!("impulse nodes: {} (ties: {})", p.impulse_count(), p.tie_count());
    println!("wrote {}", path.display());
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let LoadedRun {
        dir,
        spec,
        grid,
        result,
        mut manifest,
        run_id,
    } = run_dir::load(&args.run)?;
    if args.x0.is_empty() {
        return Err(Failure::usage("--x0 is required"));
    }
    let bound: f64 = manifest
        .get("value_bound")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Failure::usage("manifest lacks value_bound"))?;
    let cfg = SimConfig {
        t0: args.t0,
        x0: args.x0.clone(),
        paths: args.paths,
        dt: args.sim_dt.unwrap_or(grid.dt() / 5.0),
        seed: args.seed,
        impulse_cap: args
            .impulse_cap
            .unwrap_or_else(|| default_impulse_cap(bound, spec.cost_floor())),
        antithetic: args.antithetic,
    };
    cfg.validate(&spec).map_err(Failure::usage)?;
    if !grid.contains(&cfg.x0) {
        return Err(Failure::usage(format!("--x0 {:?} lies outside the grid box", cfg.x0)));
    }

    let report = if args.no_impulses {
        feynman_kac_v0(&spec, &cfg)
    } else {
        let tol = args
            .contact_tol
            .unwrap_or_else(|| default_contact_tol(&result));
        let p = extract_policy(&result, &spec, &grid, tol).map_err(solve_failure)?;
        simulate_paths(&spec, &p, &grid, &cfg)
    }
    .map_err(|e| match e {
        impulse_qvi::SimError::Solve(s) => solve_failure(s),
        other => Failure::usage(other),
    })?;
    let solver_value = result
        .value_at(&grid, grid.nearest_level(cfg.t0), &cfg.x0)
        .map_err(solve_failure)?;

    let out_dir = args.out.clone().unwrap_or(dir);
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Failure::usage(format!("cannot create {}: {e}", out_dir.display())))?;
    let x0 = cfg.x0.iter().map(|v| fmt_num(*v)).collect::<Vec<_>>().join(",");
    let mut summary = format!("# run {run_id}\n");
    let _ = writeln!(summary, "mode = {}", if args.no_impulses { "no-impulses" } else { "policy" });
    let _ = writeln!(summary, "t0 = {}", fmt_num(cfg.t0));
    let _ = writeln!(summary, "x0 = {x0}");
    let _ = writeln!(summary, "sim_dt = {}", fmt_num(cfg.dt));
    let _ = writeln!(summary, "impulse_cap = {}", cfg.impulse_cap);
    let _ = writeln!(summary, "antithetic = {}", cfg.antithetic);
    summary.push_str(&sim_summary(&report));
    let _ = writeln!(summary, "solver_value = {}", fmt_num(solver_value));
    run_dir::write_text(&out_dir.join(run_dir::SIM_SUMMARY), &summary)?;

    let path = out_dir.join(run_dir::SIM_PATHS);
    let mut w = run_dir::create(&path)?;
    write_paths_csv(&mut w, &report, Some(&run_id)).map_err(Failure::usage)?;
    run_dir::finish(w, &path)?;

    manifest.set("sim.estimate", fmt_num(report.mean));
    manifest.set("sim.stderr", fmt_num(report.stderr));
    manifest.set("sim.paths", report.paths);
    manifest.set("sim.seed", report.seed);
    manifest.set("sim.rng", RNG_NAME);
    manifest.set("sim.simulated", chrono::Utc::now().to_rfc3339());
    run_dir::write_text(&out_dir.join(run_dir::MANIFEST), &manifest.render())?;

    print!("{}", summary.split_once('\n').map_or("", |s| s.1));
    if report.flagged > 0 {
        eprintln!(
            "warning: {} of {} paths left the trust region",
            report.flagged, report.paths
        );
    }
    Ok(())
}

pub fn compare(first: &Path, second: &Path, tol: f64, out: Option<&Path>) -> Result<(), Failure> {
    let a = run_dir::load(first)?;
    let b = run_dir::load(second)?;
    if a.grid != b.grid {
        return Err(Failure::usage(format!(
            "{} and {} were solved on different grids",
            first.display(),
            second.display()
        )));
    }
    let mut sup = 0.0f64;
    let mut excess = f64::NEG_INFINITY;
    for (fa, fb) in a.result.fields.iter().zip(&b.result.fields) {
        for (x, y) in fa.values.iter().zip(&fb.values) {
            sup = sup.max((x - y).abs());
            excess = excess.max(x - y);
        }
    }
    if let Some(path) = out {
        let diff: Vec<_> = a
            .result
            .fields
            .iter()
            .zip(&b.result.fields)
            .map(|(fa, fb)| {
                impulse_qvi::ValueField::new(
                    fa.time_index,
                    fa.values.iter().zip(&fb.values).map(|(x, y)| x - y).collect(),
                )
            })
            .collect();
        let mut w = run_dir::create(path)?;
        let id = format!("{} minus {}", a.run_id, b.run_id);
        write_value_csv(&mut w, &diff, &a.result.times, &a.grid, Some(&id)).map_err(Failure::usage)?;
        run_dir::finish(w, path)?;
    }
    println!("sup_norm = {}", fmt_num(sup));
    println!("max_excess = {}", fmt_num(excess));
    println!("ordered: {}", if excess <= tol { "yes" } else { "no" });
    Ok(())
}
