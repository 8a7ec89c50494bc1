use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use genbound_cli::{default_workers, resolve_seed, run, Command, ExperimentConfig};

/// Generalization-bound experiments for distributed learning.
#[derive(Debug, Parser)]
#[command(name = "genbound", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides GENBOUND_SEED and the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the config value, then the CPU count.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let result = ExperimentConfig::load(&args.config).and_then(|config| {
        let env = std::env::var("GENBOUND_SEED").ok();
        let seed = resolve_seed(args.seed, env.as_deref(), config.seed)?;
        let workers = args.workers.or(config.workers).unwrap_or_else(default_workers);
        run(args.command, &config, seed, workers, &args.out)
    });
    let code = match result {
        Ok(outcome) => {
            if !outcome.passed {
                log::error!("property check failed; see {}", outcome.out_dir.display());
            }
            outcome.exit_code()
        }
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
