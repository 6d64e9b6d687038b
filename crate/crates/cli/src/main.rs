//! `triplet-icp`: train, calibrate, monitor and evaluate from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] triplet_icp::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "triplet-icp",
    version,
    about = "Triplet embeddings with a conformal assurance monitor"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split the data, train a model and build its embedding index.
    Train(TrainArgs),
    /// Score the calibration split with one nonconformity measure.
    Calibrate(CalibrateArgs),
    /// Stream decisions for feature rows read from a file or stdin.
    Monitor(MonitorArgs),
    /// Compute every metric and write reports and curves.
    Evaluate(EvaluateArgs),
    /// Render saved evaluation reports as comparison tables.
    Report(ReportArgs),
}

/// Flat `key = value` file whose entries act as flags; explicit flags win.
#[derive(Debug, Args)]
struct ConfigArg {
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    _config: ConfigArg,
    /// Labelled CSV: feature columns followed by a label column.
    #[arg(long)]
    pub data: PathBuf,
    /// Skip the first line of the CSV.
    #[arg(long)]
    pub header: bool,
    #[arg(long, default_value_t = 24)]
    pub n_features: usize,
    #[arg(long, default_value = "model.json")]
    pub model: PathBuf,
    #[arg(long, default_value = "index.json")]
    pub index: PathBuf,
    /// Also write the per-epoch log to this file.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Seeds both the split and training.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub test_frac: f64,
    /// Calibration share of what remains after the test split.
    #[arg(long, default_value_t = 0.2)]
    pub cal_frac: f64,
    /// Keep raw feature values instead of z-scoring with proper-training stats.
    #[arg(long)]
    pub no_normalize: bool,
    /// Train the softmax classifier instead of the triplet network.
    #[arg(long)]
    pub baseline: bool,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.2)]
    pub margin: f64,
    #[arg(long, default_value_t = 128)]
    pub anchors_per_iteration: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Widths of the four hidden layers; the last is the embedding width.
    #[arg(long, default_value = "128,128,128,16")]
    pub hidden: String,
    /// Search structures kept in the index: all, knn, 1nn or centroid.
    #[arg(long, default_value = "all")]
    pub index_storage: String,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    _config: ConfigArg,
    /// The CSV the model was trained on.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "model.json")]
    pub model: PathBuf,
    #[arg(long, default_value = "index.json")]
    pub index: PathBuf,
    #[arg(long, default_value = "knn")]
    pub ncm: String,
    #[arg(long, default_value_t = triplet_icp::ncm::DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value = "calibration.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    #[command(flatten)]
    _config: ConfigArg,
    #[arg(long, default_value = "model.json")]
    pub model: PathBuf,
    #[arg(long, default_value = "index.json")]
    pub index: PathBuf,
    #[arg(long, default_value = "calibration.json")]
    pub calibration: PathBuf,
    /// Significance level in (0, 1).
    #[arg(long)]
    pub epsilon: f64,
    /// Feature rows (optionally followed by a label); `-` reads stdin.
    #[arg(long, default_value = "-")]
    pub input: String,
    #[arg(long)]
    pub header: bool,
    /// Expected NCM; a calibration for a different one is refused.
    #[arg(long)]
    pub ncm: Option<String>,
    #[arg(long, default_value_t = triplet_icp::ncm::DEFAULT_K)]
    pub k: usize,
    /// Include a label only when its p-value is strictly above epsilon.
    #[arg(long)]
    pub strict_gt: bool,
    /// Stop at the first malformed row instead of reporting it and going on.
    #[arg(long)]
    pub fail_fast: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    _config: ConfigArg,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "model.json")]
    pub model: PathBuf,
    #[arg(long, default_value = "index.json")]
    pub index: PathBuf,
    /// Second model (typically `train --baseline`) to compare against.
    #[arg(long, requires = "baseline_index")]
    pub baseline_model: Option<PathBuf>,
    #[arg(long, requires = "baseline_model")]
    pub baseline_index: Option<PathBuf>,
    #[arg(long, default_value = "eval")]
    pub out_dir: PathBuf,
    /// Comma-separated significance levels; default is 60 log-spaced points in [0.001, 0.4].
    #[arg(long)]
    pub epsilon_grid: Option<String>,
    /// Comma-separated NCMs to evaluate.
    #[arg(long, default_value = "knn,1nn,centroid")]
    pub ncm: String,
    #[arg(long, default_value_t = triplet_icp::ncm::DEFAULT_K)]
    pub k: usize,
    #[arg(long)]
    pub strict_gt: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    _config: ConfigArg,
    /// `report_*.json` files written by `evaluate`.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Print flat key-value lines instead of tables.
    #[arg(long)]
    pub key_value: bool,
}

fn run(argv: Vec<String>) -> Result<(), CliError> {
    let argv = config::expand_config(argv)?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage {
                Err(CliError::Usage(String::new()))
            } else {
                Ok(())
            };
        }
    };
    match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Calibrate(a) => commands::calibrate(&a),
        Command::Monitor(a) => commands::monitor(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Report(a) => commands::report(&a),
    }
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
