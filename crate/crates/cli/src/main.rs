mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Failure;
use config::{Command, RunConfig};

/// Risk studies of the classical and oracle Hodges' estimators.
///
/// Every run starts from the subcommand's defaults, overlays the TOML file
/// given by --config, then applies --seed and --out. Exit codes: 0 success,
/// 1 a check failed or a violation was found, 2 configuration error.
#[derive(Parser)]
#[command(name = "hodges", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (outputs do not depend on it).
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    workers: Option<u32>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// n-scaled MSE curves of the one-dimensional classical estimator, with the closed form.
    Fig1,
    /// Monte Carlo risk curves for any estimators, losses and model along a grid.
    RiskSweep,
    /// Sample-path check of the finite-sample scaled-error lower bounds.
    VerifyBounds,
    /// Selection probabilities over increasing n and the scaled covariance at the largest n.
    OracleCheck,
    /// Risk curves of the base, Hodges and thresholding estimators on common draws.
    BaselineCompare,
    /// Simulate one dataset and its base estimate.
    Simulate,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Fig1 => Command::Fig1,
            Cmd::RiskSweep => Command::RiskSweep,
            Cmd::VerifyBounds => Command::VerifyBounds,
            Cmd::OracleCheck => Command::OracleCheck,
            Cmd::BaselineCompare => Command::BaselineCompare,
            Cmd::Simulate => Command::Simulate,
        }
    }
}

fn execute(cli: &Cli) -> Result<commands::Outcome, Failure> {
    let cmd = Command::from(cli.command);
    let text = match &cli.config {
        Some(path) => Some(
            std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?,
        ),
        None => None,
    };
    let cfg = RunConfig::resolve(cmd, text.as_deref(), cli.seed, cli.out.as_deref())?;
    if let Some(workers) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers as usize)
            .build_global()
            .map_err(|e| Failure::Config(format!("cannot start {workers} workers: {e}")))?;
    }
    commands::run(cmd, &cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            for file in &outcome.files {
                println!("wrote {}", file.display());
            }
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                println!("FAILED");
                ExitCode::from(1)
            }
        }
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
