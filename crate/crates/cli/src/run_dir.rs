//! Layout of a solve output directory and loading it back.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use impulse_qvi::io::{read_value_csv, Manifest};
use impulse_qvi::{GridSpec, ProblemSpec, SolveResult};
use sha2::{Digest, Sha256};

use crate::Failure;

pub const PROBLEM: &str = "problem.cfg";
pub const MANIFEST: &str = "manifest.txt";
pub const VALUE: &str = "value.csv";
pub const CASCADE: &str = "cascade.csv";
pub const RESIDUALS: &str = "residuals.csv";
pub const POLICY: &str = "policy.csv";
pub const SIM_SUMMARY: &str = "simulation.txt";
pub const SIM_PATHS: &str = "paths.csv";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Identifier stamped into every artifact: hash of the config bytes and of
/// every parameter that influences the numbers.
pub fn run_id(config: &[u8], parameters: &str) -> String {
    let mut h = Sha256::new();
    h.update(config);
    h.update([0u8]);
    h.update(parameters.as_bytes());
    hex::encode(&h.finalize()[..8])
}

pub fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
}

pub fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), Failure> {
    w.flush()
        .map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))
}

pub fn parse_problem(path: &Path, bytes: &[u8]) -> Result<ProblemSpec, Failure> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Failure::usage(format!("{} is not valid UTF-8", path.display())))?;
    ProblemSpec::from_config_str(text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

/// A solved run read back from disk.
pub struct LoadedRun {
    pub dir: PathBuf,
    pub spec: ProblemSpec,
    pub grid: GridSpec,
    pub result: SolveResult,
    pub manifest: Manifest,
    pub run_id: String,
}

pub fn load(dir: &Path) -> Result<LoadedRun, Failure> {
    let manifest_path = dir.join(MANIFEST);
    let manifest_text = fs::read_to_string(&manifest_path).map_err(|e| {
        Failure::usage(format!(
            "{} is not a solve directory ({}: {e})",
            dir.display(),
            manifest_path.display()
        ))
    })?;
    let manifest = Manifest::parse(&manifest_text).map_err(|e| Failure::usage(format!("{}: {e}", manifest_path.display())))?;
    let grid = manifest
        .grid()
        .map_err(|e| Failure::usage(format!("{}: {e}", manifest_path.display())))?;
    let problem_path = dir.join(PROBLEM);
    let spec = parse_problem(&problem_path, &read_bytes(&problem_path)?)?;
    let run_id = manifest
        .get("run_id")
        .ok_or_else(|| Failure::usage(format!("{} lacks run_id", manifest_path.display())))?
        .to_string();

    let value_path = dir.join(VALUE);
    let file = File::open(&value_path)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", value_path.display())))?;
    let table = read_value_csv(BufReader::new(file))
        .map_err(|e| Failure::usage(format!("{}: {e}", value_path.display())))?;
    let (fields, times) = table
        .into_fields(&grid)
        .map_err(|e| Failure::usage(format!("{}: {e}", value_path.display())))?;

    let number = |key: &str| -> Result<f64, Failure> {
        manifest
            .get(key)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| Failure::usage(format!("{} lacks a numeric `{key}`", manifest_path.display())))
    };
    let result = SolveResult {
        fields,
        times,
        history: Vec::new(),
        n_used: number("cascade.n_used")? as usize,
        converged: manifest.get("cascade.converged") == Some("true"),
        residual_summary: number("residual_summary")?,
        theta: number("solve.theta")?,
    };
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        spec,
        grid,
        result,
        manifest,
        run_id,
    })
}
