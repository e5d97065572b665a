//! `recaudit` — membership-inference privacy audits for recommenders.
//!
//! Pipeline: `prepare` builds a shadow-model ensemble directory from a
//! dataset, `score` turns it into per-interaction and per-user privacy
//! scores, `attack` evaluates the underlying membership attack against
//! the stored target model, `unlearn` runs score-guided removal and
//! retraining, and `report` summarizes any output directory.

mod commands;
mod config;
mod error;

use clap::{Parser, Subcommand};
use config::Config;
use error::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "recaudit",
    version,
    about = "Membership-inference privacy scoring for recommender systems"
)]
struct Cli {
    /// Flat key=value config file; flags and --set override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed; every derived RNG stream is a pure function of it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory for this command's artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override a single config key (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the shadow ensemble (and target model) into a directory.
    Prepare,
    /// Write interaction/user privacy score CSVs from an ensemble.
    Score,
    /// Evaluate the membership attack: ROC curve and metrics.
    Attack,
    /// Remove top-scored data, retrain, re-score, and report.
    Unlearn,
    /// Summarize the artifacts in an output directory.
    Report,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = Config::resolve(cli.config.as_deref(), &cli.set)?;
    if let Some(seed) = cli.seed {
        cfg.override_value("seed", seed.to_string());
    }
    if let Some(workers) = cli.workers {
        cfg.override_value("workers", workers.to_string());
    }
    if let Some(out) = cli.out {
        cfg.override_value("out", out.display().to_string());
    }
    let workers = cfg.workers()?;
    if workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("worker pool: {e}")))?;
    }
    match cli.command {
        Command::Prepare => commands::prepare(&cfg),
        Command::Score => commands::score(&cfg),
        Command::Attack => commands::attack(&cfg),
        Command::Unlearn => commands::unlearn(&cfg),
        Command::Report => commands::report(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
