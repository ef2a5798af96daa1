//! Command-line front end: `synth`, `prepare`, `train`, `eval`, `baseline`
//! and `grid`. Every command writes `resolved_config.json` next to its
//! outputs.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use clozemem::models::Variant;
use clozemem::training::SelectionMetric;

pub use config::RunConfig;

/// Error caused by how the command was invoked rather than by its work.
/// The binary exits with status 2 for these.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub(crate) fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(
    name = "clozemem",
    version,
    about = "Window memory networks for cloze reading comprehension"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cloze corpus.
    Synth(SynthArgs),
    /// Import and transform a dataset.
    Prepare(PrepareArgs),
    /// Train a model and keep the best dev epoch.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test set.
    Eval(EvalArgs),
    /// Run a non-neural baseline or the query-only classifier.
    Baseline(BaselineArgs),
    /// Grid search over learning rate, dimension and hops.
    Grid(GridArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed for every random choice of the run.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub dev_size: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub entity_pool_size: Option<usize>,
    #[arg(long)]
    pub entities_per_passage: Option<usize>,
    #[arg(long)]
    pub distractor_windows: Option<usize>,
    #[arg(long)]
    pub overlap: Option<usize>,
    #[arg(long)]
    pub unseen_rate: Option<f64>,
    #[arg(long)]
    pub noise_rate: Option<f64>,
    #[arg(long)]
    pub query_answer_correlation: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    Canonical,
    Cbt,
    Marked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Anonymize,
    Cap(usize),
    SeenFilter,
}

impl std::str::FromStr for Transform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "anonymize" => Ok(Transform::Anonymize),
            "seen-filter" => Ok(Transform::SeenFilter),
            _ => match s.strip_prefix("cap:").map(str::parse::<usize>) {
                Some(Ok(k)) if k > 0 => Ok(Transform::Cap(k)),
                _ => Err(format!(
                    "unknown transform `{s}` (expected anonymize, cap:K or seen-filter)"
                )),
            },
        }
    }
}

impl std::fmt::Display for Transform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Transform::Anonymize => f.write_str("anonymize"),
            Transform::Cap(k) => write!(f, "cap:{k}"),
            Transform::SeenFilter => f.write_str("seen-filter"),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PrepareArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "canonical")]
    pub format: InputFormat,
    /// Field names and entity markers for `--format marked` (JSON).
    #[arg(long)]
    pub field_map: Option<PathBuf>,
    /// Transforms applied in order, comma separated or repeated.
    #[arg(long = "transform", value_delimiter = ',')]
    pub transforms: Vec<Transform>,
    /// Training set for `seen-filter`.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Output file name inside the output directory.
    #[arg(long, default_value = "prepared.jsonl")]
    pub output: String,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub anonymized: Option<bool>,
    #[arg(long)]
    pub hops: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub radius: Option<usize>,
    #[arg(long)]
    pub memory_size: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub key_value: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub pretrained_output: Option<bool>,
    #[arg(long)]
    pub min_count: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Selection {
    Accuracy,
    F1,
}

impl From<Selection> for SelectionMetric {
    fn from(s: Selection) -> Self {
        match s {
            Selection::Accuracy => SelectionMetric::Accuracy,
            Selection::F1 => SelectionMetric::F1,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct OptimArgs {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_enum)]
    pub selection: Option<Selection>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    /// Pretrained vectors in word-per-line text format.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Also write per-hop attention of the selected model on the dev set.
    #[arg(long)]
    pub trace: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Training set for the seen/unseen breakdown.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Record attention and report its statistics.
    #[arg(long)]
    pub stats: bool,
    /// Another report to diff against; deltas are this run minus that one.
    #[arg(long)]
    pub compare: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Random,
    Maxfreq,
    Simwindow,
    QueryOnly,
}

#[derive(Debug, Clone, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub kind: BaselineKind,
    #[arg(long)]
    pub test: PathBuf,
    /// Training set: seen/unseen breakdown, and the data `query-only` learns from.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Dev set for `query-only` epoch selection.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Word vectors for `simwindow`.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub grid_lr: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub grid_dim: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub grid_hops: Option<Vec<usize>>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Prepare(a) => commands::prepare(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Baseline(a) => commands::baseline(&a),
        Command::Grid(a) => commands::grid(&a),
    }
}
