//! `pointebm`: train, sample and evaluate energy-based point-cloud models.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical divergence.

mod commands;
mod model;
mod run;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Divergence(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Divergence(m) => write!(f, "numerical divergence: {m}"),
        }
    }
}

impl From<pointebm::Error> for CliError {
    fn from(e: pointebm::Error) -> Self {
        match e {
            pointebm::Error::Config(_) => CliError::Usage(e.to_string()),
            pointebm::Error::Divergence { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "pointebm", version, about = "Energy-based generative modeling of unordered point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command.
#[derive(Args, Clone)]
pub struct Common {
    /// Master seed; each random component draws from its own named sub-stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Plain-text key=value file; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace an existing non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an energy model to the clouds listed in a manifest.
    Train(commands::TrainArgs),
    /// Draw clouds from a trained model with short-run Langevin dynamics.
    Sample(commands::SampleArgs),
    /// Fit latents whose generated clouds match given targets.
    Reconstruct(commands::ReconstructArgs),
    /// Generate frames along a straight line between two latents.
    Interpolate(commands::InterpolateArgs),
    /// Compare a directory of generated clouds against a reference directory.
    Evaluate(commands::EvaluateArgs),
    /// Train and test a linear classifier on pooled encoder features.
    Classify(commands::ClassifyArgs),
    /// Write pooled encoder features of every cloud in a manifest.
    Features(commands::FeaturesArgs),
    /// Write a synthetic dataset of one shape kind plus its manifest.
    SynthData(commands::SynthArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Sample(a) => commands::sample(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Interpolate(a) => commands::interpolate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Classify(a) => commands::classify(a),
        Command::Features(a) => commands::features(a),
        Command::SynthData(a) => commands::synth_data(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pointebm: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
