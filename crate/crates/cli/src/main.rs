//! `hrnn`: generate, ingest, train, evaluate and inspect personalised
//! re-rankers.
//!
//! Exit codes: 0 success, 1 runtime failure (I/O and the like), 2 usage or
//! input error, 3 training diverged (non-finite loss).

mod commands;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hrnn_core::hrnn::{ModelConfig, ModelVariant};

/// Raised for bad flags or inputs; exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser, Debug)]
#[command(name = "hrnn", version, about = "Personalised search re-ranking with hierarchical recurrent user models")]
struct Cli {
    /// Worker threads; 1 gives fully reproducible runs.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic click log with ground truth.
    Synth(SynthArgs),
    /// Validate a log and write it back normalised, with summary statistics.
    Ingest(IngestArgs),
    /// Train a model and write a checkpoint plus a training report.
    Train(TrainArgs),
    /// Build the P-Click click store and the PTM topic model.
    Baseline(BaselineArgs),
    /// Evaluate the original ranking, baselines and checkpoints on the test split.
    Evaluate(EvaluateArgs),
    /// Write personalised rankings for test queries.
    Rerank(RerankArgs),
    /// Dump attention weights over a user's past sessions.
    Attention(AttentionArgs),
}

#[derive(Args, Debug, Clone)]
pub struct OutArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long, default_value_t = 200)]
    pub users: usize,
    /// Users whose history is two topic-disjoint blocks.
    #[arg(long, default_value_t = 0)]
    pub probe_users: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub min_sessions: usize,
    #[arg(long, default_value_t = 24)]
    pub max_sessions: usize,
    #[arg(long, default_value_t = 0.3)]
    pub repeat_prob: f64,
    #[arg(long, default_value_t = 0.5)]
    pub refind_prob: f64,
    #[arg(long, default_value_t = 0.4)]
    pub ambiguous_frac: f64,
    #[arg(long, default_value_t = 0.02)]
    pub drift: f64,
    #[arg(long, default_value_t = 0.03)]
    pub click_floor: f64,
    #[arg(long, default_value_t = 0.1)]
    pub dwell_noise: f64,
    #[arg(long, default_value_t = 8)]
    pub topics: usize,
    #[arg(long, default_value_t = 50)]
    pub embedding_dim: usize,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Click log (JSON Lines).
    #[arg(long)]
    pub log: PathBuf,
    /// Document texts (JSON Lines of `{"doc", "tokens"}`).
    #[arg(long)]
    pub docs: PathBuf,
    /// Word vectors in word2vec text format; hash-seeded vectors otherwise.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Segment sessions by a 30-minute gap when records lack a session id.
    #[arg(long)]
    pub gap_sessions: bool,
}

#[derive(Args, Debug, Clone)]
pub struct IngestArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub gap_sessions: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Full widths (300/300/600/1024/64).
    Full,
    /// Small widths for fast runs (50/32/64/64/16).
    Desk,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// hrnn, hrnn-qa, short-term or long-term.
    #[arg(long, default_value = "hrnn-qa")]
    pub model: ModelVariant,
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    pub preset: Preset,
    #[arg(long)]
    pub d_e: Option<usize>,
    #[arg(long)]
    pub d_s1: Option<usize>,
    #[arg(long)]
    pub d_s2: Option<usize>,
    #[arg(long)]
    pub d_a: Option<usize>,
    #[arg(long)]
    pub d_f: Option<usize>,
}

impl ModelArgs {
    pub fn config(&self) -> ModelConfig {
        let mut c = match self.preset {
            Preset::Full => ModelConfig::full(self.model),
            Preset::Desk => ModelConfig::desk(self.model),
        };
        c.d_e = self.d_e.unwrap_or(c.d_e);
        c.d_s1 = self.d_s1.unwrap_or(c.d_s1);
        c.d_s2 = self.d_s2.unwrap_or(c.d_s2);
        c.d_a = self.d_a.unwrap_or(c.d_a);
        c.d_f = self.d_f.unwrap_or(c.d_f);
        c
    }
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[arg(long, default_value_t = 50)]
    pub pair_cap: usize,
    /// Continue from this checkpoint's parameters and optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 10)]
    pub topics: usize,
    #[arg(long, default_value_t = 500)]
    pub gibbs_iterations: usize,
    #[arg(long, default_value_t = 1.0)]
    pub ptm_lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub ptm_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Trained model checkpoints; repeatable.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    /// Directory holding `pclick.tsv` and `ptm.json` from `baseline`.
    #[arg(long)]
    pub baselines: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub pclick_beta: f64,
}

#[derive(Args, Debug, Clone)]
pub struct RerankArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Only this user's queries.
    #[arg(long)]
    pub user: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct AttentionArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub user: String,
    /// Query id to condition on; defaults to the user's first test query.
    #[arg(long)]
    pub query_id: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Ingest(a) => commands::ingest(&a),
        Command::Train(a) => commands::train(&a),
        Command::Baseline(a) => commands::baseline(&a),
        Command::Evaluate(a) => commands::evaluate_cmd(&a),
        Command::Rerank(a) => commands::rerank(&a),
        Command::Attention(a) => commands::attention(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else if matches!(
                e.downcast_ref::<hrnn_core::ranker_training::TrainError>(),
                Some(hrnn_core::ranker_training::TrainError::NonFinite { .. })
            ) {
                ExitCode::from(3)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
