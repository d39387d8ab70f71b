//! `gcd`: seeded, reproducible category-discovery experiments on feature
//! data. See the per-subcommand help for flags; every flag can also come
//! from a `--config` key=value file (command line wins).

mod commands;
mod config;
mod errors;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{
    ClusterArgs, EstimateKArgs, EvalArgs, GenDataArgs, LossCheckArgs, ReportArgs, SplitArgs,
    TrainToyArgs,
};
use config::ConfigFile;
use errors::{usage, CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "gcd",
    version,
    about = "Category discovery on feature vectors: synthetic benchmarks, semi-supervised \
             clustering, class-count estimation, contrastive fine-tuning and evaluation"
)]
struct Cli {
    /// Flat key=value file supplying defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic Gaussian-blob benchmark.
    GenData(GenDataArgs),
    /// Mark a subset of classes and images as labelled.
    Split(SplitArgs),
    /// Run plain or semi-supervised k-means.
    Cluster(ClusterArgs),
    /// Estimate the number of classes.
    EstimateK(EstimateKArgs),
    /// Score saved assignments against ground truth.
    Eval(EvalArgs),
    /// Fine-tune a projection head on jittered feature views.
    TrainToy(TrainToyArgs),
    /// Check analytic loss gradients against finite differences.
    LossCheck(LossCheckArgs),
    /// Summarize run directories from their manifests.
    Report(ReportArgs),
}

/// GCD_THREADS caps internal parallelism; 0 or unset means automatic.
fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("GCD_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .map_err(|_| usage(format!("GCD_THREADS must be a non-negative integer, got {raw:?}")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("could not configure {n} threads: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenData(args) => args.run(file),
        Command::Split(args) => args.run(file),
        Command::Cluster(args) => args.run(file),
        Command::EstimateK(args) => args.run(file),
        Command::Eval(args) => args.run(file),
        Command::TrainToy(args) => args.run(file),
        Command::LossCheck(args) => args.run(file),
        Command::Report(args) => args.run(file),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Module(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
