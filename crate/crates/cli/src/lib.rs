//! Command-line front end for the `segadapt` toolkit.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use segadapt::ErrorClass;

pub use commands::run;
pub use config::RunConfigFile;

#[derive(Debug, Parser)]
#[command(name = "segadapt", version, about = "Domain-adaptive semantic segmentation toolkit")]
pub struct Cli {
    /// Base seed; for `train` it overrides the run file's `train.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run file (required by `train`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic A/B/C corpus.
    Synth(SynthArgs),
    /// Train a network from a run file.
    Train(TrainArgs),
    /// Write a color mask for every input image.
    Segment(SegmentArgs),
    /// Score predictions against a labelled manifest.
    Eval(EvalArgs),
    /// Label-free structural score of predictions.
    Spie(SpieArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Images per domain.
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    /// Image size as HEIGHTxWIDTH, both multiples of 8.
    #[arg(long, default_value = "32x32", value_parser = parse_size)]
    pub size: (usize, usize),
    #[arg(long, default_value_t = 6)]
    pub classes: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Continue from this checkpoint instead of starting fresh.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Total epochs; defaults to the run file's `train.epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    pub images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("predictor").required(true).args(["checkpoint", "identity"]))]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Decode each input image through the legend as its own prediction.
    #[arg(long)]
    pub identity: bool,
    /// Labelled dataset manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Class to leave out of scoring, by index or legend name.
    #[arg(long)]
    pub exclude_class: Option<String>,
    #[arg(long, default_value_t = segadapt::data::DEFAULT_TOLERANCE)]
    pub mask_tolerance: u8,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("predictor").required(true).args(["checkpoint", "identity"]))]
pub struct SpieArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Use each input image as its own mask.
    #[arg(long)]
    pub identity: bool,
    /// Dataset manifest; masks, if any, are not read.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Second checkpoint to compare against.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Segmenter merge scale.
    #[arg(long, default_value_t = 300.0)]
    pub k: f64,
    /// Segmenter minimum region size in pixels.
    #[arg(long, default_value_t = 20)]
    pub min_size: usize,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HEIGHTxWIDTH, got {s:?}"))?;
    let n = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
    Ok((n(h)?, n(w)?))
}

/// Process exit status for each error class. Usage errors exit with 2.
pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Config => 3,
        ErrorClass::Io => 4,
        ErrorClass::Label => 5,
        ErrorClass::Numeric => 6,
        ErrorClass::Contract => 7,
        ErrorClass::Format => 8,
    }
}
