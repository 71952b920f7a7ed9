//! `tamt`: synthetic multi-timbre data, constant-Q analysis, timbre-separated
//! transcription, scoring and plots from the command line.

mod commands;
mod config;
mod plot;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "tamt", version, about = "Timbre-separated transcription toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every pipeline subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration; flags below override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    /// Log-magnitude heatmap of a spectrogram or any real matrix.
    Spectrogram,
    /// Grey-level pianoroll (note channel).
    Roll,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset: per-instrument WAVs, scores, rolls and manifests.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Write a manifest for this mixture size (overrides the config list).
        #[arg(long = "mix")]
        mix: Option<usize>,
    },
    /// Build one mixture with references, from a dataset manifest row or
    /// freshly generated.
    Mix {
        #[command(flatten)]
        common: Common,
        /// Sources in the mixture.
        #[arg(long = "mix")]
        mix: Option<usize>,
        /// Noise level of the mixture in dB SNR.
        #[arg(long = "snr-db")]
        snr_db: Option<f64>,
        /// Dataset directory written by `gen`.
        #[arg(long, requires = "row")]
        dataset: Option<PathBuf>,
        /// Manifest row to mix.
        #[arg(long)]
        row: Option<usize>,
    },
    /// Constant-Q transform of a WAV file, raw and energy-normalized.
    Cqt {
        #[command(flatten)]
        common: Common,
        input: PathBuf,
    },
    /// Timbre-agnostic transcription of a WAV file.
    Transcribe {
        #[command(flatten)]
        common: Common,
        input: PathBuf,
    },
    /// Separate a mixture into per-source pianorolls and note lists.
    Separate {
        #[command(flatten)]
        common: Common,
        input: PathBuf,
        /// Number of sources.
        #[arg(long = "mix")]
        mix: Option<usize>,
        /// Bin-selection threshold of the frame-level path.
        #[arg(long)]
        threshold: Option<f64>,
        /// One associative-memory pass over the embeddings before clustering.
        #[arg(long, value_enum)]
        associate: Option<Switch>,
        /// Cluster individual bins instead of note events.
        #[arg(long = "frame-level")]
        frame_level: bool,
        /// Directory holding reference rolls `ref_<k>.roll`; enables scoring.
        #[arg(long)]
        refs: Option<PathBuf>,
    },
    /// Permutation-invariant frame scores of estimated against reference rolls.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Reference pianoroll files.
        #[arg(long = "ref", required = true, num_args = 1..)]
        refs: Vec<PathBuf>,
        /// Estimated pianoroll files.
        #[arg(long = "est", required = true, num_args = 1..)]
        ests: Vec<PathBuf>,
        /// Binarization threshold.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Render a tensor file as a PPM heatmap.
    Plot {
        #[command(flatten)]
        common: Common,
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
    },
    /// Run the built-in contract checks; exit status reports the outcome.
    Selftest {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
