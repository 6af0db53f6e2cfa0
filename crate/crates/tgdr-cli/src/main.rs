//! Command-line front end for the threshold gradient descent toolkit:
//! simulated data generation, fitting, cross-validation, bagging, pooling,
//! prediction, scoring, and the replicated simulation benchmark.

mod commands;
mod data;
mod model_file;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tgdr::TgdrError;

/// Failure surfaced to the shell as `error[CODE]: message` on stderr.
#[derive(Debug)]
pub enum CliError {
    Lib(TgdrError),
    Parse(String),
    Io(String),
    Mode(String),
    Schema(String),
    Label(String),
}

impl From<TgdrError> for CliError {
    fn from(e: TgdrError) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Lib(e) => match e {
                TgdrError::DimensionMismatch(_) => "DIM_MISMATCH",
                TgdrError::InvalidValue(_) => "INVALID_VALUE",
                TgdrError::InvalidConfig(_) => "INVALID_CONFIG",
                TgdrError::NonFinitePath { .. } => "NON_FINITE_PATH",
                TgdrError::MissingClassInStudy { .. } => "MISSING_CLASS",
                TgdrError::DegenerateStudy { .. } => "DEGENERATE_STUDY",
                TgdrError::Stratification(_) => "STRATIFICATION",
                TgdrError::ResampleInfeasible { .. } => "RESAMPLE_INFEASIBLE",
                TgdrError::BaggingFailures { .. } => "BAGGING_FAILED",
                TgdrError::CutoffSelection(_) => "CUTOFF_ERROR",
            },
            CliError::Parse(_) => "PARSE_ERROR",
            CliError::Io(_) => "IO_ERROR",
            CliError::Mode(_) => "MODE_MISMATCH",
            CliError::Schema(_) => "SCHEMA_ERROR",
            CliError::Label(_) => "LABEL_ERROR",
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Lib(e) => e.to_string(),
            CliError::Parse(m)
            | CliError::Io(m)
            | CliError::Mode(m)
            | CliError::Schema(m)
            | CliError::Label(m) => m.clone(),
        }
    }
}

/// Input table selection shared by every data-reading command.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// Samples file: comma- or tab-separated with a header row.
    pub data: PathBuf,
    /// Header name of the class label column.
    #[arg(long, default_value = "label")]
    pub label_col: String,
    /// Header name of the study column; absent means one study.
    #[arg(long)]
    pub study_col: Option<String>,
    /// Class levels in model order, comma separated; the last listed is the
    /// reference class. Default: sorted observed levels, largest last.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    /// Input delimiter: auto, comma, or tab.
    #[arg(long, default_value = "auto")]
    pub delimiter: String,
}

/// Fit settings shared by fit and bag.
#[derive(Debug, Args)]
pub struct FitTuning {
    /// Gradient threshold in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    /// Number of update steps.
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    /// Step size per update.
    #[arg(long, default_value_t = 0.01)]
    pub delta_v: f64,
    /// Fit on raw feature values instead of centered and scaled ones.
    #[arg(long)]
    pub no_standardize: bool,
    /// Base seed for randomized stages.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation design: 1 (independent features) or 2 (correlated pairs).
    #[arg(long)]
    pub example: u8,
    #[arg(long, default_value_t = 100)]
    pub n_train: usize,
    #[arg(long, default_value_t = 200)]
    pub n_test: usize,
    /// Total feature count; only the first four are informative.
    #[arg(long, default_value_t = 100)]
    pub features: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Replicate index, offsetting the random stream.
    #[arg(long, default_value_t = 0)]
    pub replicate: u64,
    #[arg(long)]
    pub out_train: PathBuf,
    #[arg(long)]
    pub out_test: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub tune: FitTuning,
    /// Where to write the fitted model document.
    #[arg(long)]
    pub out_model: PathBuf,
    /// Optional metric,value report file.
    #[arg(long)]
    pub out_report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Threshold grid, comma separated. Default 0,0.1,...,1.
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    /// Longest path tried.
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    /// Step-count grid spacing.
    #[arg(long, default_value_t = 10)]
    pub stride: usize,
    #[arg(long, default_value_t = 0.01)]
    pub delta_v: f64,
    #[arg(long)]
    pub no_standardize: bool,
    /// Assign folds by plain shuffling instead of stratifying on class (and
    /// study).
    #[arg(long)]
    pub no_stratify: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write the tau-by-steps score grid.
    #[arg(long)]
    pub out_csv: PathBuf,
    /// Optional JSON file with the chosen setting.
    #[arg(long)]
    pub out_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BagArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub tune: FitTuning,
    /// Bootstrap resample count.
    #[arg(long, default_value_t = 100)]
    pub bootstrap: usize,
    /// Refit on features whose selection frequency exceeds this value.
    #[arg(long, conflicts_with = "auto_cutoff")]
    pub cutoff: Option<f64>,
    /// Pick the cutoff from --cutoffs by refit error.
    #[arg(long)]
    pub auto_cutoff: bool,
    /// Candidate cutoffs for --auto-cutoff. Default 0.05,0.10,...,0.50.
    #[arg(long, value_delimiter = ',')]
    pub cutoffs: Option<Vec<f64>>,
    /// Where to write the per-feature selection frequencies.
    #[arg(long)]
    pub out_report: PathBuf,
    /// Where to write the restricted refit model; needs a cutoff.
    #[arg(long)]
    pub out_model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PoolArgs {
    /// Meta model document to pool.
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Divide the outcome variance by p(1-p)^2 instead of (p(1-p))^2 when
    /// weighting studies.
    #[arg(long)]
    pub paper_literal_variance: bool,
    #[arg(long)]
    pub out_model: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model document to predict with.
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Where to write per-sample predicted labels and probabilities.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Predictions file produced by the predict command.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Optional metric,value report file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    /// Simulation design: 1 (independent features) or 2 (correlated pairs).
    #[arg(long)]
    pub example: u8,
    #[arg(long, default_value_t = 50)]
    pub replicates: usize,
    #[arg(long, default_value_t = 100)]
    pub n_train: usize,
    #[arg(long, default_value_t = 200)]
    pub n_test: usize,
    #[arg(long, default_value_t = 100)]
    pub features: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Threshold grid for the per-replicate tuning.
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    /// Longest path tried during tuning.
    #[arg(long, default_value_t = 1500)]
    pub cv_steps: usize,
    #[arg(long, default_value_t = 25)]
    pub cv_stride: usize,
    #[arg(long, default_value_t = 100)]
    pub bootstrap: usize,
    /// Selection-frequency cutoffs reported as extra columns.
    #[arg(long, value_delimiter = ',', default_values_t = [0.4, 0.8])]
    pub cutoffs: Vec<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub delta_v: f64,
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for replicates.csv and summary.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a simulated train and test split.
    Simulate(SimulateArgs),
    /// Fit one model (single- or multi-study by the data's shape).
    Fit(FitArgs),
    /// Cross-validate the (tau, steps) grid.
    Cv(CvArgs),
    /// Bootstrap the fit and report per-feature selection frequencies.
    Bag(BagArgs),
    /// Combine a meta model's study blocks into one predictor.
    Pool(PoolArgs),
    /// Predict labels and class probabilities with a saved model.
    Predict(PredictArgs),
    /// Score a predictions file against labeled data.
    Evaluate(EvaluateArgs),
    /// Replicate the simulated benchmark table.
    #[command(name = "replicate-table1")]
    ReplicateTable1(ReplicateArgs),
}

#[derive(Debug, Parser)]
#[command(name = "tgdr", version, about = "Threshold gradient descent classification toolkit")]
struct Cli {
    /// Worker threads for parallel stages; 0 keeps the library default.
    /// Outputs do not depend on this value.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if cli.jobs > 0 {
        // Ignore failure: the global pool can only be built once.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global();
    }
    match &cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::Fit(args) => commands::fit(args),
        Command::Cv(args) => commands::cv(args),
        Command::Bag(args) => commands::bag(args),
        Command::Pool(args) => commands::pool(args),
        Command::Predict(args) => commands::predict_cmd(args),
        Command::Evaluate(args) => commands::evaluate_cmd(args),
        Command::ReplicateTable1(args) => commands::replicate_table1(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), e.message());
            ExitCode::FAILURE
        }
    }
}
