//! `ordinal-state`: generate synthetic cohorts, train cross-validated
//! models, evaluate them and run few-shot calibration curves.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 I/O error,
//! 4 numerical failure during training.

mod commands;
mod rundir;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Core(ordinal_state::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        use ordinal_state::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Core(e) => match e {
                E::Io { .. } | E::Csv(_) => 3,
                E::Divergence { .. } => 4,
                _ => 2,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<ordinal_state::Error> for CliError {
    fn from(e: ordinal_state::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "ordinal-state", version, about = "Pairwise disease-state learning on synthetic B-scan cohorts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort dataset.
    Gen(GenArgs),
    /// Train cross-validated models.
    Train(TrainArgs),
    /// Evaluate a training run on its held-out test patients.
    Eval(EvalArgs),
    /// Few-shot threshold curves on a synthetic activity task.
    Fewshot(FewshotArgs),
    /// Print checkpoint metadata.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replace an existing output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub patients: Option<usize>,
    #[arg(long)]
    pub visits: Option<usize>,
    #[arg(long)]
    pub scans: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Label flip probability for gradable pairs.
    #[arg(long)]
    pub flip_rate: Option<f64>,
    /// Probability that a pair has one corrupted image.
    #[arg(long)]
    pub other_rate: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory or manifest path.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output run directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Fraction of patients held out for testing.
    #[arg(long)]
    pub holdout: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Folds trained concurrently.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub alpha_lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Learn a per-pair slope (label-noise estimation).
    #[arg(long)]
    pub noise_estimation: bool,
    /// Train the 4-way softmax baseline instead of the ordinal model.
    #[arg(long)]
    pub naive_baseline: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training run directory.
    #[arg(long)]
    pub run: PathBuf,
    /// Output directory; defaults to `<run>/eval`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use a different copy of the dataset than the one recorded in the run.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Replace model outputs with a predictor that reads the labels.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub gamma_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FewshotArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out: PathBuf,
    /// Run directory of the plain ordinal model.
    #[arg(long)]
    pub ours: Option<PathBuf>,
    /// Run directory of the ordinal model trained with noise estimation.
    #[arg(long)]
    pub ours_noise: Option<PathBuf>,
    /// Run directory of the softmax baseline (logistic regression on its features).
    #[arg(long)]
    pub naive: Option<PathBuf>,
    /// Which fold's checkpoint to use.
    #[arg(long)]
    pub fold: Option<usize>,
    /// Comma-separated shot counts per class.
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_images: Option<usize>,
    #[arg(long)]
    pub activity_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Checkpoint file or fold directory.
    pub checkpoint: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Fewshot(a) => commands::fewshot(a),
        Command::Inspect(a) => commands::inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
