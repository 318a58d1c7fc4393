//! `slc`: skin lesion classification pipeline driver.
//!
//! Each subcommand is one pipeline stage. Stages share a run directory
//! derived from the effective configuration, read the previous stage's
//! manifest, and write their own artifacts next to it, so a full run is
//! `ingest` -> `preprocess` -> `segment` -> `augment` -> `train` (or
//! `crossval`) -> `evaluate` / `predict`.

mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "slc", version, about = "Skin lesion classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every stage; they pin down the run configuration and
/// therefore the run directory.
#[derive(Args)]
pub struct RunFlags {
    /// Config file (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the model: m1, m2-one, or m2-dual.
    #[arg(long)]
    model: Option<String>,

    /// Override the cross-validation fold count.
    #[arg(long)]
    folds: Option<usize>,

    /// Feed the grayscale model mask-multiplied images.
    #[arg(long)]
    use_mask: bool,

    /// Parent directory of run directories.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a ground-truth CSV and index the images it names.
    Ingest {
        /// Ground-truth CSV with one-hot class columns.
        #[arg(long)]
        labels: PathBuf,
        /// Directory holding the images (and optional masks).
        #[arg(long)]
        images: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Border-crop, resize and normalize every ingested image.
    Preprocess {
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Threshold-segment every preprocessed image into a lesion mask.
    Segment {
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Balance classes by augmenting under-represented ones.
    Augment {
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Train once on a stratified split and save the best-epoch weights.
    Train {
        #[command(flatten)]
        flags: RunFlags,
    },
    /// K-fold cross-validation; writes metrics and the best fold's weights.
    Crossval {
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Score saved weights over the whole balanced dataset.
    Evaluate {
        /// Weights file; defaults to the run's crossval or train output.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Classify one image file; prints `class,p0,...,p7`.
    Predict {
        /// Image to classify.
        #[arg(long)]
        image: PathBuf,
        /// Weights file; defaults to the run's crossval or train output.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[command(flatten)]
        flags: RunFlags,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest { labels, images, flags } => stages::ingest(&flags, &labels, &images),
        Command::Preprocess { flags } => stages::preprocess(&flags),
        Command::Segment { flags } => stages::segment(&flags),
        Command::Augment { flags } => stages::augment(&flags),
        Command::Train { flags } => stages::train(&flags),
        Command::Crossval { flags } => stages::crossval(&flags),
        Command::Evaluate { weights, flags } => stages::evaluate(&flags, weights),
        Command::Predict { image, weights, flags } => stages::predict(&flags, &image, weights),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
