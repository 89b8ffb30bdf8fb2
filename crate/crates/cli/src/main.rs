//! `tskip` command-line driver.

mod ablate;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use error::CliError;

#[derive(Parser)]
#[command(name = "tskip", version, about = "Spiking networks with temporally delayed skip connections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as spike CSV files plus a manifest.
    Synth(SynthFlags),
    /// Train an architecture on a manifest dataset.
    Train(TrainFlags),
    /// Rank random architectures by their score at initialization.
    Search(SearchFlags),
    /// Train one model per grid point along an ablation axis.
    Ablate(AblateFlags),
    /// Estimate inference energy of a checkpoint.
    Energy(EnergyFlags),
}

#[derive(Args, Serialize)]
struct SynthFlags {
    /// Task name; only `delayed-recall` is available.
    #[arg(long)]
    task: Option<String>,
    /// Recall delay in steps.
    #[arg(long = "D", alias = "delay")]
    #[serde(rename = "D")]
    delay: Option<usize>,
    /// Sequence length.
    #[arg(long = "T", alias = "timesteps")]
    #[serde(rename = "T")]
    timesteps: Option<usize>,
    /// Training samples.
    #[arg(long)]
    n: Option<usize>,
    /// Test samples.
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    /// Distractor density in [0, 1].
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file with default values for any of the flags above.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

/// Optimization flags shared by `train` and `ablate`.
#[derive(Args, Serialize)]
struct HyperFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// cosine, multistep or constant.
    #[arg(long)]
    scheduler: Option<String>,
    /// Floor of the cosine schedule.
    #[arg(long)]
    min_lr: Option<f64>,
    /// Multistep decay factor.
    #[arg(long)]
    gamma: Option<f64>,
    /// Iterations per cosine update, or epochs per multistep decay.
    #[arg(long)]
    every: Option<usize>,
    /// cross-entropy or mse.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Stop early once test accuracy reaches this fraction.
    #[arg(long)]
    target_accuracy: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Serialize)]
struct TrainFlags {
    /// Architecture JSON file.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Dataset manifest.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    hyper: HyperFlags,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SearchFlags {
    /// Search-space JSON file.
    #[arg(long)]
    space: Option<PathBuf>,
    /// shd, ssc, shd-large, ssc-large, dvs or flow.
    #[arg(long)]
    preset: Option<String>,
    /// Candidates to sample.
    #[arg(long)]
    n: Option<usize>,
    /// Candidates to keep.
    #[arg(long)]
    k: Option<usize>,
    /// Manifest whose first training samples form the probe batch. A
    /// seeded random spike batch is used when absent.
    #[arg(long)]
    probe: Option<PathBuf>,
    #[arg(long)]
    probe_batch: Option<usize>,
    /// Worker threads for scoring.
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct AblateFlags {
    /// delta_t, position or depth.
    #[arg(long)]
    axis: Option<String>,
    /// Comma-separated grid values.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Grid points trained at once.
    #[arg(long)]
    parallel: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    hyper: HyperFlags,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct EnergyFlags {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// test or train.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(f) => commands::synth(config::resolve(&f, f.config.as_deref())?),
        Command::Train(f) => commands::train(config::resolve(&f, f.config.as_deref())?),
        Command::Search(f) => commands::search(config::resolve(&f, f.config.as_deref())?),
        Command::Ablate(f) => ablate::ablate(config::resolve(&f, f.config.as_deref())?),
        Command::Energy(f) => commands::energy(config::resolve(&f, f.config.as_deref())?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
