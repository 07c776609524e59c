//! `sbp`: train, evaluate, prune and report on structured-Bayesian-pruning
//! networks.
//!
//! Exit status: 0 success, 2 configuration or usage error, 3 data or
//! checkpoint error, 4 numeric divergence during training, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sbp_core::pipeline::KlMode;

mod commands;
mod failure;

use failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "sbp", version, about = "Structured Bayesian pruning workflows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a network; writes checkpoint, metrics CSV, sparsity report and summary.
    Train(TrainArgs),
    /// Print the test error of a checkpoint on the config's dataset.
    Eval(EvalArgs),
    /// Compact a checkpoint; writes the compacted checkpoint and a sparsity report.
    Prune(PruneArgs),
    /// Print FLOPs before/after pruning for a checkpoint or an untrained config.
    Report(ReportArgs),
}

/// Config file plus the flags that override it.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// `plain` or `scaled`.
    #[arg(long)]
    kl_mode: Option<KlMode>,
    #[arg(long)]
    snr_threshold: Option<f64>,
    #[arg(long)]
    shuffle_labels: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Directory for all artifacts (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Print a JSON object instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct PruneArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Override the pruning threshold stored in the checkpoint.
    #[arg(long)]
    snr_threshold: Option<f64>,
    /// Config whose dataset is used to record the test error in the report.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    checkpoint: Option<PathBuf>,
    /// Report on the freshly initialized network this config describes.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    snr_threshold: Option<f64>,
    /// Print only the JSON form.
    #[arg(long)]
    json: bool,
    /// Also write `flops_report.json` here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<(), Failure> = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Prune(a) => commands::prune(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
