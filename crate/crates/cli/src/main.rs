use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod run_dir;

/// Solve finite-horizon impulse control problems on a lattice.
#[derive(Debug, Parser)]
#[command(name = "impulse-qvi", version, about)]
struct Cli {
    /// Worker threads for the solver and the simulator.
    #[arg(long, global = true, env = "IMPULSE_QVI_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the standing assumptions on a lattice and print the report.
    Validate {
        config: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        /// Slack allowed on each sampled check.
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// Solve the QVI and write value, cascade, residual and manifest files.
    Solve(SolveArgs),
    /// Extract the feedback policy of a solved run.
    Policy {
        /// Directory written by `solve`.
        run: PathBuf,
        #[arg(long)]
        contact_tol: Option<f64>,
        /// Output file (default: <run>/policy.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate the extracted policy (or no impulses) by Monte Carlo.
    Simulate(SimulateArgs),
    /// Nodewise difference of two solved runs on the same grid.
    Compare {
        first: PathBuf,
        second: PathBuf,
        /// Tolerance for the ordering check `V1 <= V2 + tol`.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Difference field output (default: print summary only).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Lower box corner, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub grid_lo: Option<Vec<f64>>,
    /// Upper box corner, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub grid_hi: Option<Vec<f64>>,
    /// Nodes per axis, comma separated (a single value applies to all axes).
    #[arg(long, value_delimiter = ',')]
    pub nodes: Option<Vec<usize>>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub time_steps: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    pub config: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub theta: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub cascade_tol: f64,
    #[arg(long, default_value_t = 50)]
    pub cascade_max: usize,
    #[arg(long, default_value_t = 1e-12)]
    pub obstacle_tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_sweeps: usize,
    #[arg(long, default_value_t = 1.0)]
    pub relaxation: f64,
    /// Solve without impulses (the first cascade iterate).
    #[arg(long)]
    pub no_impulses: bool,
    /// Also re-solve on [0, t_r] from the level-r slice and report the discrepancy.
    #[arg(long)]
    pub restart_level: Option<usize>,
    /// Solve even when validation fails.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Directory written by `solve`.
    pub run: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub t0: f64,
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    /// Euler step (default: a fifth of the grid time step, so impulse
    /// chains decided at one level can play out over consecutive steps).
    #[arg(long)]
    pub sim_dt: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub impulse_cap: Option<usize>,
    #[arg(long)]
    pub antithetic: bool,
    #[arg(long)]
    pub contact_tol: Option<f64>,
    /// Never intervene (plain Feynman-Kac estimate).
    #[arg(long)]
    pub no_impulses: bool,
    /// Output directory (default: the run directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failed command and the exit status it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Validation or convergence failure (exit 1).
    Domain(String),
    /// Bad input, flags or artifacts (exit 2).
    Usage(String),
}

impl Failure {
    pub fn usage(e: impl ToString) -> Self {
        Self::Usage(e.to_string())
    }

    pub fn domain(e: impl ToString) -> Self {
        Self::Domain(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Validate { config, grid, tol } => commands::validate(&config, &grid, tol),
        Command::Solve(args) => commands::solve(&args),
        Command::Policy {
            run,
            contact_tol,
            out,
        } => commands::policy(&run, contact_tol, out.as_deref()),
        Command::Simulate(args) => commands::simulate(&args),
        Command::Compare {
            first,
            second,
            tol,
            out,
        } => commands::compare(&first, &second, tol, out.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
