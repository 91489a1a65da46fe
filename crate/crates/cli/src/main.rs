//! `gzgd`: gaze-guided outcome classification pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 non-finite loss.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gzgd_core::mask::{MaskConfig, MaskMode};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "gzgd",
    version,
    about = "Gaze-guided attention for binary video outcome classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset with gaze traces.
    Synth(SynthArgs),
    /// Summarize a dataset: clip counts, class balance, missing gaze.
    Describe(DescribeArgs),
    /// Build visual masks for one clip from its gaze trace.
    Mask(MaskCmdArgs),
    /// Train the convolutional autoencoder on dataset frames.
    TrainAe(TrainAeArgs),
    /// Train the attention classifier on frozen encoder features.
    TrainCls(TrainClsArgs),
    /// Score predictions: confusion metrics, ROC and PR curves.
    Eval(EvalArgs),
    /// Trust spectrum, NetTrustScore and trust densities of predictions.
    Trust(TrustArgs),
}

#[derive(Debug, Args)]
struct SeedArg {
    /// Random seed (falls back to GZGD_SEED, then 0).
    #[arg(long, env = "GZGD_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 120)]
    clips: usize,
    #[arg(long, default_value_t = 24)]
    frames: usize,
    /// Frame height and width.
    #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [64, 64])]
    size: Vec<usize>,
    /// Successful fraction, as a decimal ("0.5") or a count ratio ("325:129").
    #[arg(long, default_value = "0.5")]
    ratio: String,
    /// Probability that a frame has no gaze sample.
    #[arg(long, default_value_t = 0.1)]
    missing: f64,
    /// Gaze jitter standard deviation in pixels.
    #[arg(long, default_value_t = 2.0)]
    jitter: f64,
    #[arg(long, default_value_t = 1)]
    distractors: usize,
    /// Pixel noise standard deviation in intensity levels.
    #[arg(long, default_value_t = 8.0)]
    noise: f64,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Debug, Args)]
struct DescribeArgs {
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    PerFrame,
    Combined,
}

#[derive(Debug, Args)]
struct MaskArgs {
    /// Per-pixel decay rate of the propagated intensity.
    #[arg(long, default_value_t = 0.75)]
    alpha: f64,
    /// Propagation floor below which intensity is zeroed.
    #[arg(long, default_value_t = 0.25)]
    beta: f64,
    /// Gaussian sigma in pixels (default: frame height / 32).
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, value_enum, default_value_t = ModeArg::PerFrame)]
    mode: ModeArg,
    /// Leave frames without gaze to the combined-mask fallback instead of
    /// interpolating the trace.
    #[arg(long)]
    no_interp: bool,
}

impl MaskArgs {
    fn config(&self, height: usize) -> MaskConfig {
        let base = MaskConfig::for_height(height);
        MaskConfig {
            alpha: self.alpha,
            beta: self.beta,
            sigma: self.sigma.unwrap_or(base.sigma),
            mode: match self.mode {
                ModeArg::PerFrame => MaskMode::PerFrame,
                ModeArg::Combined => MaskMode::Combined,
            },
            ..base
        }
    }
}

#[derive(Debug, Args)]
struct MaskCmdArgs {
    /// Clip directory holding frame_*.pgm and gaze.csv.
    #[arg(long)]
    clip: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    mask: MaskArgs,
}

#[derive(Debug, Args)]
struct TrainAeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    latent_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    /// Perceptual network layer (1-3) compared by the loss.
    #[arg(long, default_value_t = 2)]
    perceptual_layer: usize,
    /// Train on every N-th frame of each clip.
    #[arg(long, default_value_t = 1)]
    frame_stride: usize,
    /// Loss curve CSV (default: <out>.loss.csv).
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Debug, Args)]
struct TrainClsArgs {
    #[arg(long)]
    data: PathBuf,
    /// Trained autoencoder checkpoint.
    #[arg(long)]
    ae: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fuse gaze-mask features (M2); without it the baseline M1 is trained.
    #[arg(long)]
    use_gaze: bool,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0.002)]
    lr: f64,
    #[arg(long, default_value_t = 4)]
    se_reduction: usize,
    /// Fraction of each class held out for testing.
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Held-out predictions CSV (default: preds.csv beside <out>).
    #[arg(long)]
    preds: Option<PathBuf>,
    #[command(flatten)]
    mask: MaskArgs,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    preds: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// ROC plot (SVG); the curve points are also written as CSV beside it.
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Precision-recall plot (SVG), with a CSV beside it.
    #[arg(long)]
    plot_pr: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrustArgs {
    #[arg(long)]
    preds: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    density_csv: Option<PathBuf>,
    /// Weight classes equally instead of by their frequency.
    #[arg(long)]
    uniform_prior: bool,
    /// Reward exponent for correct answers.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Penalty exponent for wrong answers.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Density evaluation points on [0, 1].
    #[arg(long, default_value_t = 256)]
    grid: usize,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Describe(a) => commands::describe(a),
        Command::Mask(a) => commands::mask(a),
        Command::TrainAe(a) => commands::train_ae(a),
        Command::TrainCls(a) => commands::train_cls(a),
        Command::Eval(a) => commands::eval(a),
        Command::Trust(a) => commands::trust(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
