//! `cordseg`: phantom generation, training, segmentation and evaluation of
//! spinal cord gray/white matter segmentations.

mod commands;
mod config;
mod error;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use commands::{evaluate, metrics, phantom, preview, segment, train, vote};
use config::Globals;
use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "cordseg", version, about = "Spinal cord gray matter segmentation with MD-GRU")]
struct Cli {
    /// TOML file merged over the built-in settings of the command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the resolved configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output; repeat for debug messages.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic multi-subject, multi-scan data set.
    Phantom(phantom::PhantomArgs),
    /// Train a network on the train/validation splits of a manifest.
    Train(train::TrainArgs),
    /// Segment slices with a checkpoint.
    Segment(segment::SegmentArgs),
    /// Compare automatic segmentations with reference labels.
    Evaluate(evaluate::EvaluateArgs),
    /// Fuse label directories by majority voting.
    Vote(vote::VoteArgs),
    /// Write sample augmentations of a slice as images.
    AugmentPreview(preview::PreviewArgs),
    /// Metrics between two label files.
    Metrics(metrics::MetricsArgs),
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Some(c) = &cli.config {
        if !c.is_file() {
            return Err(CliError::Config(format!("config file {} not found", c.display())));
        }
    }
    let g = Globals {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
    };
    match &cli.command {
        Command::Phantom(a) => phantom::run(a, &g),
        Command::Train(a) => train::run(a, &g),
        Command::Segment(a) => segment::run(a, &g),
        Command::Evaluate(a) => evaluate::run(a, &g),
        Command::Vote(a) => vote::run(a, &g),
        Command::AugmentPreview(a) => preview::run(a, &g),
        Command::Metrics(a) => metrics::run(a, &g),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code())
        }
    }
}
