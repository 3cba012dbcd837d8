//! `guided-mel` command-line driver.
//!
//! Exit status: 0 success, 1 failed check or numerical failure, 2 usage
//! error, 3 I/O error.

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use guided_mel::Error;

use commands::*;

#[derive(Parser)]
#[command(name = "guided-mel", version, about = "Guided DDPM sampling over mel-spectrograms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a 16 kHz mono WAV file to a normalized mel tensor.
    Preprocess(PreprocessArgs),
    /// Scan a directory of WAV files for log-mel normalization stats.
    Stats(StatsArgs),
    /// Train the toy denoiser (and classifier) on a synthetic dataset.
    Train(TrainArgs),
    /// Draw one guided sample from a checkpoint.
    Sample(SampleArgs),
    /// Sample across one guidance axis and summarize accuracy and gamma.
    Sweep(SweepArgs),
    /// Run the built-in oracle checks.
    Verify(VerifyArgs),
    /// Reconstruct a waveform from a mel tensor.
    Griffinlim(GriffinLimArgs),
}

/// Guidance overrides shared by `sample` and `sweep`.
#[derive(Args, Clone, Debug, Default)]
pub struct GuidanceArgs {
    /// Classifier-free weight (-1 keeps only the unconditional branch).
    #[arg(long, allow_hyphen_values = true)]
    pub w1: Option<f64>,
    /// Classifier guidance weight.
    #[arg(long)]
    pub w2: Option<f64>,
    /// Classifier guidance applies for t <= t-start.
    #[arg(long)]
    pub t_start: Option<usize>,
    /// Use the raw classifier gradient instead of the normalized one.
    #[arg(long)]
    pub no_guidance_norm: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::BadMagic { .. } | Error::VersionMismatch { .. } | Error::Truncated { .. } | Error::Audio(_) => 3,
        Error::Config(_)
        | Error::ConfigLine { .. }
        | Error::InvalidRange(_)
        | Error::InvalidLabel { .. }
        | Error::UnknownDatasetKind(_)
        | Error::EmptyInput(_)
        | Error::DegenerateStats { .. }
        | Error::ShapeMismatch { .. }
        | Error::DimensionMismatch { .. }
        | Error::TopologyMismatch(_)
        | Error::MissingTensor(_)
        | Error::DuplicateTensor(_)
        | Error::SignalTooShort { .. }
        | Error::OddEmbeddingWidth(_)
        | Error::StepOutOfRange { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess(a) => preprocess(a),
        Command::Stats(a) => stats(a),
        Command::Train(a) => train(a),
        Command::Sample(a) => sample(a),
        Command::Sweep(a) => sweep(a),
        Command::Verify(a) => verify(a),
        Command::Griffinlim(a) => griffinlim(a),
    };
    match result {
        Ok(status) => status,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
