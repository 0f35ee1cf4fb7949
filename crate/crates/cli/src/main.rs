//! `sidarthe`: simulate, fit, forecast and sweep time-variant SIDARTHE models.
//!
//! Every command reads a TOML configuration, writes its outputs under one
//! directory, and leaves a resolved-configuration snapshot
//! (`<command>.config.toml`) and a JSON sidecar next to them. Re-running a
//! command with `--config <snapshot>` reproduces its outputs.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical divergence.

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Parser, Subcommand};

use crate::commands::Session;
use crate::config::RunConfig;

/// Environment variable holding the default sweep worker count.
const WORKERS_ENV: &str = "SIDARTHE_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "sidarthe", version, about = "Time-variant SIDARTHE fitting by gradient flow with temporal momentum")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output` in the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for random initialization, overriding `fit.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sweep worker threads.
    #[arg(long, global = true, env = WORKERS_ENV)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Integrate the model and write all states and R0 per day.
    Simulate,
    /// Fit time-variant rates to the training window.
    Fit,
    /// Forecast validation and test days from fitted rates.
    Forecast,
    /// Grid search over momentum and regularization hyperparameters.
    Grid,
    /// Momentum or regularization ablation.
    Ablate,
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    pub fn config(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }

    pub fn data(error: anyhow::Error) -> Self {
        Self { code: 2, error }
    }

    pub fn divergence(error: anyhow::Error) -> Self {
        Self { code: 3, error }
    }

    pub fn context(self, message: &'static str) -> Self {
        Self { code: self.code, error: self.error.context(message) }
    }
}

impl From<sidarthe::Error> for Failure {
    fn from(e: sidarthe::Error) -> Self {
        use sidarthe::Error as E;
        let code = match &e {
            E::Config(_) | E::Json(_) => 1,
            E::Divergence { .. } => 3,
            _ => 2,
        };
        Self { code, error: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        match error.downcast::<sidarthe::Error>() {
            Ok(e) => e.into(),
            Err(error) => Self::data(error),
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(Failure::config)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.output = out.clone();
    }
    config.output = std::path::absolute(&config.output).map_err(|e| Failure::config(e.into()))?;
    if let Some(seed) = cli.seed {
        config.fit.seed = seed;
    }
    config.check_inputs().map_err(Failure::config)?;
    if cli.workers == Some(0) {
        return Err(Failure::config(anyhow!("--workers must be at least 1")));
    }
    std::fs::create_dir_all(&config.output)
        .map_err(|e| Failure::config(anyhow!("cannot create {}: {e}", config.output.display())))?;
    let session = Session { out: config.output.clone(), config, workers: cli.workers };
    match cli.command {
        Command::Simulate => commands::simulate(&session),
        Command::Fit => commands::fit_cmd(&session),
        Command::Forecast => commands::forecast_cmd(&session),
        Command::Grid => commands::grid_cmd(&session),
        Command::Ablate => commands::ablate_cmd(&session),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
