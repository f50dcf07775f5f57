use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nutrigraph::kb::DistanceMetric;

#[derive(Debug, Parser)]
#[command(
    name = "nutrigraph",
    version,
    about = "Multi-pose graph attention screening with retrieval-augmented fusion"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Cosine,
    Euclidean,
    Mahalanobis,
}

impl From<MetricArg> for DistanceMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Cosine => DistanceMetric::Cosine,
            MetricArg::Euclidean => DistanceMetric::Euclidean,
            MetricArg::Mahalanobis => DistanceMetric::MahalanobisDiag,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic cohort as JSON Lines.
    GenData(GenData),
    /// Build a knowledge base from a labeled dataset.
    BuildKb(BuildKb),
    /// Cross-validated training; writes one checkpoint and report per fold plus a summary.
    Train(Train),
    /// Evaluate a checkpoint on a dataset.
    Evaluate(Evaluate),
    /// Predict a single subject and print the result as JSON.
    Predict(Predict),
    /// Retrain under pose, architecture or distance-metric variants.
    Ablate(Ablate),
    /// Re-evaluate trained folds across a retrieval hyperparameter grid.
    Sweep(Sweep),
    /// Start the HTTP screening service.
    Serve(Serve),
}

#[derive(Debug, Args)]
pub struct GenData {
    /// Output dataset path (.jsonl).
    #[arg(long)]
    pub out: PathBuf,
    /// Synthetic generator config (JSON); flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of subjects.
    #[arg(long)]
    pub n: Option<usize>,
    /// Fraction of malnourished subjects.
    #[arg(long)]
    pub positive_fraction: Option<f64>,
    /// Domain shift in within-class standard deviations.
    #[arg(long)]
    pub shift: Option<f64>,
    /// Prefix for subject ids.
    #[arg(long)]
    pub prefix: Option<String>,
}

#[derive(Debug, Args)]
pub struct BuildKb {
    /// Labeled dataset (.jsonl).
    #[arg(long)]
    pub data: PathBuf,
    /// Output knowledge-base path (.json).
    #[arg(long)]
    pub out: PathBuf,
    /// Distance metric.
    #[arg(long, value_enum, default_value = "cosine")]
    pub metric: MetricArg,
}

#[derive(Debug, Args)]
pub struct TrainShared {
    /// Training dataset (.jsonl).
    #[arg(long)]
    pub data: PathBuf,
    /// Knowledge base (.json); required when retrieval is on.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Training config (JSON); missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides whether retrieval fusion is used.
    #[arg(long, value_enum)]
    pub retrieval: Option<Toggle>,
    /// Rebuilds the knowledge base under this metric.
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    /// Stdout format.
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct Train {
    #[command(flatten)]
    pub shared: TrainShared,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Evaluate {
    /// Checkpoint (.json).
    #[arg(long)]
    pub model: PathBuf,
    /// Evaluation dataset (.jsonl).
    #[arg(long)]
    pub data: PathBuf,
    /// Knowledge base (.json); required when the model uses retrieval.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Output directory for evaluation.json and decision_curve.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Stdout format.
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct Predict {
    /// Checkpoint (.json).
    #[arg(long)]
    pub model: PathBuf,
    /// Knowledge base (.json).
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// File holding exactly one subject in dataset-line format.
    #[arg(long)]
    pub subject: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblateAxis {
    Pose,
    Architecture,
    Metric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    K,
    TauClass,
    Gamma,
    TauReg,
}

#[derive(Debug, Args)]
pub struct Ablate {
    #[command(flatten)]
    pub shared: TrainShared,
    /// Ablation axis.
    #[arg(long, value_enum)]
    pub axis: AblateAxis,
    /// Comma-separated variants; defaults to the full grid.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<String>>,
    /// Output table path (.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Sweep {
    #[command(flatten)]
    pub shared: TrainShared,
    /// Retrieval hyperparameter to sweep.
    #[arg(long, value_enum)]
    pub axis: SweepAxis,
    /// Comma-separated values; defaults to the standard grid.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<String>>,
    /// Output table path (.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Serve {
    /// Checkpoint (.json).
    #[arg(long)]
    pub model: PathBuf,
    /// Knowledge base as `name=path` or a path named by its file stem; repeatable.
    #[arg(long)]
    pub kb: Vec<String>,
    /// Port on 127.0.0.1.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Directory with the built UI, served under `/`.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
}
