//! `gaitfrail` command-line tool.
//!
//! Exit status: 0 on success, 2 for configuration errors, 3 for data
//! errors and 4 when training aborts on a non-finite loss. Failures print a
//! single `error class=... code=... message="..."` line on stderr.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gaitfrail::error::{Error, ErrorClass};

#[derive(Debug, Parser)]
#[command(name = "gaitfrail", version, about = "Frailty staging from silhouette gait sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic walker cohort and its manifest.
    Synth(SynthArgs),
    /// Build participant-level stratified folds and check them for leakage.
    Split(SplitArgs),
    /// Train one (configuration, fold) run.
    Train(RunArgs),
    /// Evaluate a checkpoint on the test partition of its fold.
    Evaluate(EvaluateArgs),
    /// Aggregate per-fold reports into a mean ± std table.
    Report(ReportArgs),
    /// Render Grad-CAM overlays for one participant.
    Gradcam(GradcamArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for frames and manifest.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 300)]
    pub frames: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 44)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Probability of flipping each pixel.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Fold file to write.
    #[arg(long)]
    pub out: PathBuf,
}

/// Experiment configuration shared by train, evaluate and gradcam.
/// Explicit flags take precedence over `--set`, which takes precedence
/// over `GAITFRAIL_SEED`, the config file and the defaults.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set augment.flip_prob=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub fold_plan: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub fold: Option<usize>,
    /// swingait or deepgaitv2.
    #[arg(long)]
    pub backbone: Option<String>,
    /// toy or full.
    #[arg(long)]
    pub scale: Option<String>,
    /// M1..M5 for swingait, D0..D5 for deepgaitv2.
    #[arg(long)]
    pub freeze: Option<String>,
    #[arg(long)]
    pub class_weighting: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub eval_interval: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Defaults to `<output>/model.ckpt`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Defaults to `<output>/eval`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directories searched recursively for report.txt files.
    #[arg(required = true)]
    pub dirs: Vec<PathBuf>,
    /// Also write the table to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcamArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub participant: String,
    /// Class whose score is explained; defaults to the participant's label.
    #[arg(long)]
    pub target: Option<String>,
    /// Backbone layer group; defaults to the last one.
    #[arg(long)]
    pub layer: Option<String>,
    /// Defaults to `<output>/model.ckpt`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Defaults to `<output>/gradcam/<participant>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

fn class_name(class: ErrorClass) -> &'static str {
    match class {
        ErrorClass::Config => "config",
        ErrorClass::Data => "data",
        ErrorClass::Numeric => "numeric",
    }
}

fn report_error(err: &Error) -> ExitCode {
    let message = err.to_string().replace(['\n', '\r'], " ").replace('"', "'");
    eprintln!(
        "error class={} code={} message=\"{}\"",
        class_name(err.class()),
        err.code(),
        message
    );
    ExitCode::from(exit_code(err.class()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Split(a) => commands::split(&a),
        Command::Train(a) => commands::train(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Report(a) => commands::report(&a),
        Command::Gradcam(a) => commands::gradcam(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(&e),
    }
}
