use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use consensus_rank::{DecompositionConfig, Method, OutlierMode};

#[derive(Parser, Debug, Clone)]
#[command(name = "consensus-rank", version, about = "Rank candidate captions by their deviation from the low-rank consensus of a scene")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Decompose each scene and write caption rankings
    Rank(RankArgs),
    /// Score rankings against sentence-level hallucination labels
    Evaluate(EvaluateArgs),
    /// Run the seeded synthetic benchmark grid
    Synth(SynthArgs),
    /// Write spectrum, heatmap, sensitivity and projection data per scene
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DecompositionArgs {
    #[arg(long, default_value = "svd")]
    pub method: Method,
    /// Smallest explained-variance ratio the adaptive rank must reach
    #[arg(long, default_value_t = 0.95)]
    pub variance_threshold: f64,
    /// Upper bound on the adaptive rank (default: captions − 1)
    #[arg(long)]
    pub rank_cap: Option<usize>,
    /// Fixed rank, bypassing threshold and cap
    #[arg(long)]
    pub rank_override: Option<usize>,
    /// Scale each embedding to unit length before decomposing
    #[arg(long)]
    pub normalize_rows: bool,
    /// L1 weight for rpca (default: 1/sqrt(max(n, d)))
    #[arg(long)]
    pub rpca_lambda: Option<f64>,
    #[arg(long, default_value_t = 500)]
    pub rpca_max_iterations: usize,
    /// Per-iteration growth of the rpca penalty; slower growth is more accurate
    #[arg(long, default_value_t = 1.5)]
    pub rpca_penalty_growth: f64,
}

impl DecompositionArgs {
    pub fn to_config(&self) -> DecompositionConfig {
        DecompositionConfig {
            method: self.method,
            variance_threshold: self.variance_threshold,
            rank_cap: self.rank_cap,
            rank_override: self.rank_override,
            normalize_rows: self.normalize_rows,
            rpca_lambda: self.rpca_lambda,
            rpca_max_iterations: self.rpca_max_iterations,
            rpca_penalty_growth: self.rpca_penalty_growth,
            ..DecompositionConfig::default()
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct ProviderArgs {
    /// Embedding service endpoint for captions without embeddings
    #[arg(long)]
    pub provider_url: Option<String>,
    #[arg(long)]
    pub provider_model: Option<String>,
    /// Directory for cached provider embeddings
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub provider_max_in_flight: usize,
    #[arg(long, default_value_t = 30)]
    pub provider_timeout_secs: u64,
}

#[derive(Args, Debug, Clone)]
pub struct RankArgs {
    /// Scene records, one caption per line
    #[arg(long)]
    pub input: PathBuf,
    /// Ranking records
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub decomposition: DecompositionArgs,
    #[command(flatten)]
    pub provider: ProviderArgs,
    /// Scene-level worker threads (default: available cores)
    #[arg(long)]
    pub workers: Option<usize>,
    /// Accepted for a uniform interface; ranking draws no random numbers
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-scene latency report (JSON); kept apart so rankings stay byte-stable
    #[arg(long)]
    pub timing_output: Option<PathBuf>,
    /// Also write decomposition reports for every ranked scene
    #[arg(long)]
    pub emit_reports: bool,
    #[arg(long, default_value = "reports")]
    pub report_dir: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    /// Labelled scene records
    #[arg(long)]
    pub input: PathBuf,
    /// Rankings from `rank`; ranked in-process when omitted
    #[arg(long)]
    pub rankings: Option<PathBuf>,
    /// Evaluation records
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub decomposition: DecompositionArgs,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    /// Benchmark CSV
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,1.0")]
    pub deltas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.02,0.05,0.1")]
    pub sigmas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "dense_shift,sparse_spike")]
    pub modes: Vec<OutlierMode>,
    #[arg(long, default_value_t = 10)]
    pub captions: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub consensus_rank: usize,
    #[arg(long, default_value_t = 1)]
    pub outlier_count: usize,
    /// Keep generated rows at their raw scale
    #[arg(long)]
    pub no_normalize: bool,
    /// Variance threshold for the adaptive svd arm
    #[arg(long, default_value_t = 0.95)]
    pub variance_threshold: f64,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Also write a labelled synthetic corpus in the scene record format
    #[arg(long)]
    pub corpus_output: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub corpus_scenes: usize,
    /// Outlier strength for the corpus scenes
    #[arg(long, default_value_t = 1.0)]
    pub corpus_delta: f64,
    #[arg(long, default_value_t = 0.05)]
    pub corpus_sigma: f64,
}

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    /// Scene records with embeddings
    #[arg(long)]
    pub input: PathBuf,
    /// Restrict to these scene ids
    #[arg(long, value_delimiter = ',')]
    pub scene: Vec<String>,
    #[command(flatten)]
    pub decomposition: DecompositionArgs,
    #[arg(long, default_value = "reports")]
    pub report_dir: PathBuf,
    /// Also render the projection as SVG
    #[arg(long)]
    pub svg: bool,
    #[arg(long)]
    pub workers: Option<usize>,
}
