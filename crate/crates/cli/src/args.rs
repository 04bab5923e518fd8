use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use poi_rag::eval::Ablation;
use poi_rag::llm::CorruptMode;
use poi_rag::retriever::TfScheme;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "poi-rag",
    version,
    about = "Retrieval-augmented zero-shot next-POI recommendation"
)]
pub struct Cli {
    /// TOML file with defaults for any flag; explicit flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse raw check-ins and write the dataset JSON.
    Preprocess(PreprocessArgs),
    /// Recommend next POIs for selected test queries.
    Recommend(RecommendArgs),
    /// Score every test query and write a metrics report.
    Evaluate(EvaluateArgs),
    /// Write a seeded synthetic check-in file.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Input layout; only `foursquare-tsv` is supported.
    #[arg(long)]
    pub format: Option<String>,
    /// Fail on the first malformed line instead of skipping it.
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub min_poi_interactions: Option<usize>,
    #[arg(long)]
    pub min_user_trajectories: Option<usize>,
    #[arg(long)]
    pub min_trajectory_len: Option<usize>,
    #[arg(long)]
    pub split_ratio: Option<f64>,
    #[arg(long)]
    pub session_gap_hours: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    /// Echo the first candidates of the prompt.
    MockEcho,
    /// Replay answers recorded in a journal.
    MockFixture,
    /// Damage echo answers to exercise review and repair.
    MockCorrupt,
    /// OpenAI-compatible chat completions endpoint.
    Openai,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorruptArg {
    Duplicates,
    ShortList,
    InvalidJson,
    Mixed,
}

impl From<CorruptArg> for CorruptMode {
    fn from(c: CorruptArg) -> Self {
        match c {
            CorruptArg::Duplicates => CorruptMode::Duplicates,
            CorruptArg::ShortList => CorruptMode::ShortList,
            CorruptArg::InvalidJson => CorruptMode::InvalidJson,
            CorruptArg::Mixed => CorruptMode::Mixed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TfArg {
    Raw,
    Sublinear,
}

impl From<TfArg> for TfScheme {
    fn from(t: TfArg) -> Self {
        match t {
            TfArg::Raw => TfScheme::Raw,
            TfArg::Sublinear => TfScheme::Sublinear,
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct ProviderArgs {
    #[arg(long, value_enum)]
    pub provider: Option<ProviderKind>,
    /// Journal to replay with `mock-fixture`.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub corrupt_mode: Option<CorruptArg>,
    /// Let `mock-corrupt` answer review prompts correctly.
    #[arg(long)]
    pub recover_on_review: bool,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_output_tokens: Option<u32>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    #[arg(long)]
    pub max_attempts: Option<u32>,
    /// Queries and LLM calls in flight at once.
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Append every LLM call to this JSON-lines file.
    #[arg(long)]
    pub journal: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct PipelineArgs {
    /// Trajectories retrieved per query.
    #[arg(long)]
    pub k: Option<usize>,
    /// Recommendations per query.
    #[arg(long)]
    pub k_out: Option<usize>,
    /// Decay base for the alignment weights.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub normalize_by_path: bool,
    #[arg(long, value_enum)]
    pub tf: Option<TfArg>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    /// Nearest POIs offered as candidates.
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub char_budget: Option<usize>,
    #[arg(long)]
    pub recommend_template: Option<PathBuf>,
    #[arg(long)]
    pub rectify_template: Option<PathBuf>,
    /// Skip trajectory retrieval (no context in the prompt).
    #[arg(long)]
    pub no_htr: bool,
    /// Keep retrieval order instead of reranking.
    #[arg(long)]
    pub no_gdr: bool,
    /// Skip the review pass; invalid answers are repaired directly.
    #[arg(long)]
    pub no_alr: bool,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Test query index, a comma-separated list of indices, or `all`.
    #[arg(long)]
    pub query: String,
    /// Print one JSON object per query.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// JSON report path; an aligned table is written next to it as `.txt`.
    #[arg(long)]
    pub report: PathBuf,
    /// Per-query results (JSON lines). Defaults to `<report>.results.jsonl`.
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Component ablations: full, no-alr, no-gdr-alr, no-htr-gdr-alr.
    #[arg(long, value_delimiter = ',', value_parser = parse_ablation)]
    pub ablation: Vec<Ablation>,
    /// Decay bases to sweep, e.g. 0.5,0.6,0.7.
    #[arg(long, value_delimiter = ',')]
    pub rho_sweep: Vec<f64>,
    /// Add inactive / normal / very-active user groups to the report.
    #[arg(long)]
    pub group_breakdown: bool,
    /// Cutoffs for HR@K and NDCG@K.
    #[arg(long, value_delimiter = ',')]
    pub ks: Vec<usize>,
    /// Exit non-zero when any query failed.
    #[arg(long)]
    pub strict: bool,
    /// Abort on the first failed query.
    #[arg(long)]
    pub fail_fast: bool,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub sessions_per_user: Option<usize>,
}
