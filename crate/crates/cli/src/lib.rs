//! Command-line front end: argument parsing, exit codes and the subcommands.

mod commands;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sevnet::Error;

pub use commands::run;

#[derive(Parser, Debug)]
#[command(name = "sevnet", version, about = "Crash-severity classification with attentive tabular networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate a labelled CSV and write its numeric encoding plus column statistics.
    Encode(EncodeArgs),
    /// Split, oversample and train; writes the checkpoint and a training report.
    Train(TrainArgs),
    /// Score a checkpoint on held-out rows.
    Evaluate(EvaluateArgs),
    /// Shapley attributions with importance, summary and force plots.
    Explain(ExplainArgs),
    /// Grid or random hyperparameter search with stratified k-fold cross-validation.
    Search(SearchArgs),
    /// Write a synthetic labelled dataset that follows the default schema.
    Fixture(FixtureArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CommonArgs {
    /// Root seed for every random stream.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flat `key = value` file of model hyperparameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DataArgs {
    /// Input CSV: labelled text, or numeric codes with `--encoded`.
    #[arg(long)]
    pub data: PathBuf,
    /// Schema JSON; defaults to the checkpoint's schema, else the built-in one.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// `--data` was written by `encode` (or is a split file from `train`).
    #[arg(long)]
    pub encoded: bool,
}

/// Per-run overrides of the model hyperparameters.
#[derive(Args, Debug, Clone, Default, Serialize)]
pub struct ModelFlags {
    #[arg(long)]
    pub n_d: Option<String>,
    #[arg(long)]
    pub n_a: Option<String>,
    #[arg(long)]
    pub n_steps: Option<String>,
    #[arg(long)]
    pub lambda_sparse: Option<String>,
    #[arg(long)]
    pub gamma: Option<String>,
    #[arg(long)]
    pub n_independent: Option<String>,
    #[arg(long)]
    pub n_shared: Option<String>,
    #[arg(long)]
    pub bn_momentum: Option<String>,
    #[arg(long)]
    pub clip_value: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<String>,
    #[arg(long)]
    pub mask_type: Option<String>,
    #[arg(long)]
    pub entmax_alpha: Option<String>,
    #[arg(long)]
    pub max_epochs: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub patience: Option<String>,
}

impl ModelFlags {
    fn pairs(&self) -> [(&'static str, &Option<String>); 15] {
        [
            ("n_d", &self.n_d),
            ("n_a", &self.n_a),
            ("n_steps", &self.n_steps),
            ("lambda_sparse", &self.lambda_sparse),
            ("gamma", &self.gamma),
            ("n_independent", &self.n_independent),
            ("n_shared", &self.n_shared),
            ("bn_momentum", &self.bn_momentum),
            ("clip_value", &self.clip_value),
            ("learning_rate", &self.learning_rate),
            ("mask_type", &self.mask_type),
            ("entmax_alpha", &self.entmax_alpha),
            ("max_epochs", &self.max_epochs),
            ("batch_size", &self.batch_size),
            ("patience", &self.patience),
        ]
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SmoteFlags {
    /// Oversample minority classes of the training rows up to the majority count (default).
    #[arg(long, overrides_with = "no_smote")]
    pub smote: bool,
    #[arg(long, overrides_with = "smote")]
    pub no_smote: bool,
    /// Neighbours considered per minority row.
    #[arg(long, default_value_t = 5)]
    pub k_neighbors: usize,
}

impl SmoteFlags {
    pub fn enabled(&self) -> bool {
        !self.no_smote
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub input: DataArgs,
    /// Drop rows that fail to encode instead of stopping at the first one.
    #[arg(long)]
    pub skip_bad_rows: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub input: DataArgs,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub smote: SmoteFlags,
    /// Share of rows kept for training; the rest form the untouched test split.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    /// Share of the training rows held back for early stopping (0 monitors training loss).
    #[arg(long, default_value_t = 0.1)]
    pub valid_fraction: f64,
    /// Number of bootstrap members; 1 trains a single model on all training rows.
    #[arg(long, default_value_t = 1)]
    pub bootstrap: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub input: DataArgs,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Exact,
    Permutation,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceArg {
    Probability,
    Logit,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub input: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Permutation)]
    pub method: MethodArg,
    #[arg(long, default_value_t = 100)]
    pub n_permutations: usize,
    /// Pair every sampled ordering with its reverse.
    #[arg(long)]
    pub antithetic: bool,
    /// Largest feature count the exact method will enumerate.
    #[arg(long, default_value_t = 20)]
    pub exact_limit: usize,
    /// Rows drawn from the data as the background distribution.
    #[arg(long, default_value_t = 50)]
    pub background: usize,
    /// Explain at most this many rows, in file order.
    #[arg(long, default_value_t = 100)]
    pub max_instances: usize,
    /// Class to explain, by label or index; repeat for several (default: all).
    #[arg(long = "class")]
    pub classes: Vec<String>,
    /// Row id that gets a force plot.
    #[arg(long)]
    pub row_id: Option<u64>,
    #[arg(long, value_enum, default_value_t = SpaceArg::Probability)]
    pub output: SpaceArg,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyArg {
    Grid,
    Random,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SearchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub input: DataArgs,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub smote: SmoteFlags,
    /// Search space file of `key = domain` lines.
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long, value_enum, default_value_t = StrategyArg::Grid)]
    pub strategy: StrategyArg,
    /// Number of random draws.
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct FixtureArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 1000)]
    pub rows: usize,
    /// Probability that a planted column follows the class.
    #[arg(long, default_value_t = 1.0)]
    pub signal: f64,
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Data { .. }
        | Error::Csv(_)
        | Error::Json(_)
        | Error::Io { .. }
        | Error::Schema(_)
        | Error::Stratification(_)
        | Error::CannotInterpolate { .. }
        | Error::Checkpoint(_) => 2,
        Error::Divergence { .. } => 3,
        Error::SchemaMismatch { .. } => 4,
        Error::Lookup(_) => 5,
        Error::Config(_) | Error::EnumerationLimit { .. } | Error::Contract(_) => 6,
        Error::Shape(_) | Error::NonFinite(_) | Error::UninitializedStats => 1,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 6 } else { 0 };
        }
    };
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
