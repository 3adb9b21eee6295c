//! `textstyle`: text-guided style transfer from the command line.
//!
//! Exit codes: 0 success, 1 unexpected failure (e.g. an output could not be
//! written), 2 bad arguments or inputs, 3 backend or checkpoint failure,
//! 4 training aborted on a non-finite loss.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand, ValueEnum};
use textstyle::Ablation;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_BACKEND: u8 = 3;
pub const EXIT_NON_FINITE: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "textstyle", version, about = "Text-guided image style transfer")]
struct Cli {
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize a fresh network for one content image and one text.
    Stylize(StylizeArgs),
    /// Train a feed-forward decoder for one text over a texture directory.
    FastTrain(FastTrainArgs),
    /// Run a saved network on a content image.
    Apply(ApplyArgs),
    /// Score an image against a text with random crops.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendChoice {
    /// Pre-trained weights from --weights or the TEXTSTYLE_WEIGHTS directory.
    Real,
    /// Small seeded stand-in networks; no files needed.
    Stub,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value_t = BackendChoice::Real)]
    pub backend: BackendChoice,

    /// Directory holding pre-trained weights (overrides TEXTSTYLE_WEIGHTS).
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

fn ablation_parser() -> impl TypedValueParser<Value = Ablation> {
    PossibleValuesParser::new(["no_dir", "no_patch", "no_thresh", "no_aug", "global_only"])
        .map(|s| s.parse::<Ablation>().expect("restricted to known names"))
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Style text.
    #[arg(long)]
    pub text: String,

    /// Source text the style direction starts from.
    #[arg(long, default_value = textstyle::prompt::DEFAULT_SOURCE_TEXT)]
    pub source: String,

    /// Config file of `key = value` overrides.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[command(flatten)]
    pub backend: BackendArgs,

    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub iterations: Option<usize>,

    /// Crop side; smaller gives finer, larger gives coarser stylization.
    #[arg(long)]
    pub patch_size: Option<usize>,

    #[arg(long)]
    pub tau: Option<f64>,

    #[arg(long, value_parser = ablation_parser())]
    pub ablation: Option<Ablation>,

    /// Parent directory for run outputs.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,

    /// Name of the run directory under --out.
    #[arg(long)]
    pub run_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct StylizeArgs {
    #[arg(long)]
    pub content: PathBuf,

    /// Stretch contrast of the saved image.
    #[arg(long)]
    pub enhance: bool,

    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct FastTrainArgs {
    /// Directory of PNG/JPEG texture images.
    #[arg(long)]
    pub textures: PathBuf,

    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    #[arg(long)]
    pub content: PathBuf,

    #[arg(long)]
    pub output: PathBuf,

    #[arg(long)]
    pub enhance: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Image to score.
    #[arg(long)]
    pub output: PathBuf,

    #[arg(long)]
    pub text: String,

    /// Content image, for the feature-distance metric.
    #[arg(long)]
    pub content: Option<PathBuf>,

    /// CSV of per-crop scores; a text summary is written beside it.
    #[arg(long)]
    pub report: Option<PathBuf>,

    #[command(flatten)]
    pub backend: BackendArgs,

    #[arg(long, default_value_t = textstyle::evaluation::DEFAULT_EVAL_PATCHES)]
    pub patches: usize,

    #[arg(long, default_value_t = textstyle::evaluation::DEFAULT_SIZE_RANGE.0)]
    pub min_size: usize,

    #[arg(long, default_value_t = textstyle::evaluation::DEFAULT_SIZE_RANGE.1)]
    pub max_size: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// A failed command and its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }

    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self::new(EXIT_USAGE, error)
    }

    pub fn backend(error: impl Into<anyhow::Error>) -> Self {
        Self::new(EXIT_BACKEND, error)
    }
}

impl From<textstyle::Error> for Failure {
    fn from(e: textstyle::Error) -> Self {
        use textstyle::Error as E;
        let code = match &e {
            E::NonFinite { .. } => EXIT_NON_FINITE,
            E::BackendUnavailable(_) | E::Checkpoint(_) | E::Tensor(_) => EXIT_BACKEND,
            _ => EXIT_USAGE,
        };
        Self::new(code, e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Self::new(EXIT_FAILURE, e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Stylize(a) => commands::stylize(a),
        Command::FastTrain(a) => commands::fast_train(a),
        Command::Apply(a) => commands::apply(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
