//! Command-line flags, the optional TOML config file, and their merge.
//!
//! Every numeric parameter can come from either source; flags win.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::failure::Failure;

/// Seed used when neither the flags nor the config file set one.
pub const DEFAULT_SEED: u64 = 20_240_601;
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_PATHS: usize = 1000;
pub const DEFAULT_SUBSTEPS: usize = 10;

#[derive(Debug, Parser)]
#[command(name = "mflq", version, about = "Linear-quadratic mean-field control: Riccati solvers, simulation and turnpike experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the standing assumptions; exit 0 iff they hold.
    Validate(CommonArgs),
    /// Solve the finite-horizon or the ergodic Riccati system.
    Solve(CommonArgs),
    /// Run the gain, pair and averaged-value turnpike experiments.
    Turnpike(CommonArgs),
    /// Simulate the optimal closed loop by Euler–Maruyama.
    Simulate(CommonArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Finite,
    Ergodic,
}

/// Flags shared by all subcommands. Settings a command does not use are ignored.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Problem file (JSON).
    #[arg(long)]
    pub problem: Option<PathBuf>,
    /// TOML file with default values for any of these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Horizon length.
    #[arg(long = "T", value_name = "T")]
    pub horizon: Option<f64>,
    /// RK4 steps for the finite-horizon system [default: max(200, ceil(100 T))].
    #[arg(long)]
    pub steps: Option<usize>,
    /// Comma-separated ascending horizons for the averaged-value ladder.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub horizons: Option<Vec<f64>>,
    /// Number of Monte Carlo paths [default: 1000].
    #[arg(long)]
    pub paths: Option<usize>,
    /// Random seed [default: 20240601].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Solver tolerance [default: 1e-10].
    #[arg(long)]
    pub tol: Option<f64>,
    /// Directory receiving every output file.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Overwrite existing outputs and proceed past a failed assumption check.
    #[arg(long)]
    pub force: bool,
    /// Format of tabular outputs (and of the validate report on stdout).
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Feedback used by solve and simulate [default: ergodic].
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Initial state of the simulated closed loop [default: 0].
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
    pub x0: Option<Vec<f64>>,
    /// Initial state of the finite-horizon path (turnpike).
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
    pub x0_finite: Option<Vec<f64>>,
    /// Initial state of the ergodic path (turnpike).
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
    pub x0_erg: Option<Vec<f64>>,
    /// Euler–Maruyama substeps per recording interval [default: 10].
    #[arg(long)]
    pub substeps: Option<usize>,
    /// Recording intervals on [0, T] [default: depends on the command].
    #[arg(long)]
    pub intervals: Option<usize>,
    /// Worker threads for simulation; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Use the empirical mean of the ensemble instead of the exact mean.
    #[arg(long)]
    pub particle: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    problem: Option<PathBuf>,
    #[serde(rename = "T")]
    horizon: Option<f64>,
    steps: Option<usize>,
    horizons: Option<Vec<f64>>,
    paths: Option<usize>,
    seed: Option<u64>,
    tol: Option<f64>,
    output_dir: Option<PathBuf>,
    force: Option<bool>,
    format: Option<Format>,
    mode: Option<Mode>,
    x0: Option<Vec<f64>>,
    x0_finite: Option<Vec<f64>>,
    x0_erg: Option<Vec<f64>>,
    substeps: Option<usize>,
    intervals: Option<usize>,
    threads: Option<usize>,
    particle: Option<bool>,
}

/// Fully merged settings of one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: Option<PathBuf>,
    pub horizon: Option<f64>,
    pub steps: Option<usize>,
    pub horizons: Vec<f64>,
    pub paths: usize,
    pub seed: u64,
    pub tol: f64,
    pub output_dir: Option<PathBuf>,
    pub force: bool,
    pub format: Option<Format>,
    pub mode: Mode,
    pub x0: Option<Vec<f64>>,
    pub x0_finite: Option<Vec<f64>>,
    pub x0_erg: Option<Vec<f64>>,
    pub substeps: usize,
    pub intervals: Option<usize>,
    pub threads: Option<usize>,
    pub particle: bool,
}

impl RunConfig {
    pub fn format(&self) -> Format {
        self.format.unwrap_or(Format::Csv)
    }

    pub fn problem(&self) -> Result<&Path, Failure> {
        self.problem
            .as_deref()
            .ok_or_else(|| Failure::usage("--problem is required"))
    }

    pub fn horizon(&self, why: &str) -> Result<f64, Failure> {
        self.horizon
            .ok_or_else(|| Failure::usage(format!("--T is required {why}")))
    }

    pub fn output_dir(&self) -> Result<&Path, Failure> {
        self.output_dir
            .as_deref()
            .ok_or_else(|| Failure::usage("--output-dir is required"))
    }
}

/// Reads the config file (if any) and overlays the flags.
pub fn resolve(args: CommonArgs) -> Result<RunConfig, Failure> {
    let file = match &args.config {
        Some(path) => read_config(path)?,
        None => FileConfig::default(),
    };
    let cfg = RunConfig {
        problem: args.problem.or(file.problem),
        horizon: args.horizon.or(file.horizon),
        steps: args.steps.or(file.steps),
        horizons: args.horizons.or(file.horizons).unwrap_or_default(),
        paths: args.paths.or(file.paths).unwrap_or(DEFAULT_PATHS),
        seed: args.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
        tol: args.tol.or(file.tol).unwrap_or(DEFAULT_TOL),
        output_dir: args.output_dir.or(file.output_dir),
        force: args.force || file.force.unwrap_or(false),
        format: args.format.or(file.format),
        mode: args.mode.or(file.mode).unwrap_or(Mode::Ergodic),
        x0: args.x0.or(file.x0),
        x0_finite: args.x0_finite.or(file.x0_finite),
        x0_erg: args.x0_erg.or(file.x0_erg),
        substeps: args.substeps.or(file.substeps).unwrap_or(DEFAULT_SUBSTEPS),
        intervals: args.intervals.or(file.intervals),
        threads: args.threads.or(file.threads),
        particle: args.particle || file.particle.unwrap_or(false),
    };
    check_ranges(&cfg)?;
    Ok(cfg)
}

fn read_config(path: &Path) -> Result<FileConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg: FileConfig =
        toml::from_str(&text).map_err(|e| Failure::usage(format!("config {}: {}", path.display(), e.message())))?;
    // Paths inside the config are relative to the config file.
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [&mut cfg.problem, &mut cfg.output_dir].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

fn check_ranges(cfg: &RunConfig) -> Result<(), Failure> {
    if let Some(t) = cfg.horizon {
        if !(t.is_finite() && t > 0.0) {
            return Err(Failure::usage(format!("--T must be positive and finite, got {t}")));
        }
    }
    if cfg.steps == Some(0) {
        return Err(Failure::usage("--steps must be at least 1"));
    }
    if cfg.paths == 0 {
        return Err(Failure::usage("--paths must be at least 1"));
    }
    if cfg.substeps == 0 {
        return Err(Failure::usage("--substeps must be at least 1"));
    }
    if cfg.intervals == Some(0) {
        return Err(Failure::usage("--intervals must be at least 1"));
    }
    if cfg.threads == Some(0) {
        return Err(Failure::usage("--threads must be at least 1"));
    }
    if !(cfg.tol.is_finite() && cfg.tol > 0.0) {
        return Err(Failure::usage(format!("--tol must be positive, got {}", cfg.tol)));
    }
    if let Some(h) = cfg.horizons.iter().find(|h| !(h.is_finite() && **h > 0.0)) {
        return Err(Failure::usage(format!("--horizons entries must be positive, got {h}")));
    }
    if cfg.horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Failure::usage("--horizons must be strictly ascending"));
    }
    for (flag, v) in [("--x0", &cfg.x0), ("--x0-finite", &cfg.x0_finite), ("--x0-erg", &cfg.x0_erg)] {
        if v.as_ref().is_some_and(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Failure::usage(format!("{flag} entries must be finite")));
        }
    }
    Ok(())
}
