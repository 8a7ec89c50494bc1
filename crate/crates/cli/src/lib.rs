//! Experiment runner behind the `genbound` binary.
//!
//! Each subcommand reads a JSON [`config::ExperimentConfig`], runs its
//! experiment on a fixed-size worker pool and writes CSV tables plus a
//! `manifest.json` with the config echo and a SHA-256 per output file.

pub mod check;
pub mod config;
pub mod experiments;
pub mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, TailConfig};
pub use output::OutputFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    GaussianMean,
    LinregFig2,
    Sgd,
    BoundsTable,
    MiSweep,
    Check,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GaussianMean => "gaussian-mean",
            Command::LinregFig2 => "linreg-fig2",
            Command::Sgd => "sgd",
            Command::BoundsTable => "bounds-table",
            Command::MiSweep => "mi-sweep",
            Command::Check => "check",
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// Process exit status: 2 for bad inputs, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<genbound_core::Error> for CliError {
    fn from(e: genbound_core::Error) -> Self {
        if e.is_configuration() {
            CliError::Config(e.to_string())
        } else {
            CliError::Numeric(e.to_string())
        }
    }
}

/// Flag beats environment beats config file.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: u64) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("GENBOUND_SEED is not an unsigned integer: {v:?}"))),
        None => Ok(config),
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    /// False when a verified property failed.
    pub passed: bool,
    pub out_dir: PathBuf,
    pub outputs: Vec<OutputFile>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Validates `config`, runs `command` on `workers` threads and writes every
/// output plus the manifest into `out_dir`.
pub fn run(command: Command, config: &ExperimentConfig, seed: u64, workers: usize, out_dir: &Path) -> Result<Outcome, CliError> {
    config.validate(command)?;
    if workers == 0 {
        return Err(CliError::Config("workers must be >= 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))?;
    let mut out = output::OutputDir::create(out_dir)?;
    let start = Instant::now();
    log::info!("{} with seed {seed} on {workers} worker(s)", command.name());
    let passed = pool.install(|| -> Result<bool, CliError> {
        match command {
            Command::GaussianMean => experiments::run_gaussian_mean(config, seed, &mut out),
            Command::LinregFig2 => experiments::run_linreg_fig2(config, seed, &mut out),
            Command::Sgd => experiments::run_sgd(config, seed, &mut out),
            Command::BoundsTable => experiments::run_bounds_table(config, seed, &mut out),
            Command::MiSweep => experiments::run_mi_sweep(config, seed, &mut out),
            Command::Check => check::run_check(config, seed, &mut out),
        }
    })?;
    let outputs = out.files().to_vec();
    let manifest = output::RunManifest {
        tool: "genbound",
        version: env!("CARGO_PKG_VERSION"),
        command: command.name(),
        seed,
        workers,
        k_grid: config.k_values(),
        config,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        passed,
        outputs: &outputs,
    };
    out.write_json("manifest.json", &manifest)?;
    Ok(Outcome {
        passed,
        out_dir: out_dir.to_path_buf(),
        outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(Some(3), Some("5"), 7).unwrap(), 3);
        assert_eq!(resolve_seed(None, Some("5"), 7).unwrap(), 5);
        assert_eq!(resolve_seed(None, None, 7).unwrap(), 7);
        assert!(resolve_seed(None, Some("x"), 7).is_err());
    }

    #[test]
    fn error_exit_codes() {
        let e: CliError = genbound_core::Error::Config("x".into()).into();
        assert_eq!(e.exit_code(), 2);
        let e: CliError = genbound_core::Error::Degenerate("x".into()).into();
        assert_eq!(e.exit_code(), 3);
        let e: CliError = genbound_core::Error::Divergence { round: 2, detail: "x".into() }.into();
        assert_eq!(e.exit_code(), 3);
    }
}
