mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

/// Two-stage legal document retrieval: ingestion, BM25 and dense indexes,
/// re-ranking, evaluation, negative mining and a loss laboratory.
#[derive(Parser, Debug)]
#[command(name = "legalrank", version)]
pub struct Cli {
    /// Dataset directory written by `ingest`.
    #[arg(long, global = true, default_value = "store")]
    pub store: PathBuf,

    /// `key = value` file; flags given on the command line override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Normalize a corpus CSV and a QA CSV into the store.
    Ingest(IngestArgs),
    /// Split stored pairs into train and eval by question id.
    Split(SplitArgs),
    /// Build the BM25 index.
    IndexLexical(IndexLexicalArgs),
    /// Embed the corpus.
    IndexDense(IndexDenseArgs),
    /// First-stage retrieval; writes a run file.
    Retrieve(RetrieveArgs),
    /// Retrieve then re-rank; writes the final run file.
    Rerank(RerankArgs),
    /// Mine negatives; writes labeled pairs as JSON lines.
    Mine(MineArgs),
    /// Score run files against gold pairs.
    Eval(EvalArgs),
    /// Token-length histograms and answers per question.
    Stats(StatsArgs),
    /// Train the toy encoder and print one JSON trace line per epoch.
    Losslab(LosslabArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub qa: PathBuf,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long, default_value_t = 0.9)]
    pub ratio: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct IndexLexicalArgs {
    #[arg(long, default_value = "okapi")]
    pub variant: String,
    /// Defaults to 1.5 for okapi and 1.2 for plus.
    #[arg(long)]
    pub k1: Option<f64>,
    #[arg(long, default_value_t = 0.75)]
    pub b: f64,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    /// `default` or `cmd:PROGRAM ARGS...` (one line in, one line out).
    #[arg(long, default_value = "default")]
    pub segmenter: String,
}

#[derive(Args, Debug, Clone)]
pub struct EmbedderArgs {
    /// `hashedbow`, `file:PATH` or `remote:URL`.
    #[arg(long)]
    pub embedder: Option<String>,
    /// Dimension for `hashedbow`.
    #[arg(long, default_value_t = 256)]
    pub dim: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 4)]
    pub max_in_flight: usize,
    #[arg(long, default_value_t = 3)]
    pub max_attempts: usize,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 30)]
    pub timeout: u64,
}

#[derive(Args, Debug)]
pub struct IndexDenseArgs {
    #[command(flatten)]
    pub embed: EmbedderArgs,
}

#[derive(Args, Debug)]
pub struct RetrieveArgs {
    #[arg(long, default_value = "lexical")]
    pub retriever: String,
    #[arg(long, default_value_t = 90)]
    pub k: usize,
    /// `all`, `train` or `eval`.
    #[arg(long, default_value = "eval")]
    pub split: String,
    /// Run file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub embed: EmbedderArgs,
}

#[derive(Args, Debug)]
pub struct RerankArgs {
    #[arg(long, default_value = "lexical")]
    pub retriever: String,
    /// `bm25`, `cosine`, `blend`, `remote:URL`, `oracle` or `constant`.
    #[arg(long, default_value = "blend")]
    pub scorer: String,
    #[arg(long, default_value_t = 90)]
    pub k_retrieve: usize,
    #[arg(long, default_value_t = 10)]
    pub k_final: usize,
    #[arg(long, default_value = "eval")]
    pub split: String,
    /// Final run file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the first-stage run.
    #[arg(long)]
    pub stage1_out: Option<PathBuf>,
    /// Also write the metric report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub embed: EmbedderArgs,
}

#[derive(Args, Debug)]
pub struct MineArgs {
    /// `hard`, `semi-hard` or `easy`.
    #[arg(long, default_value = "hard")]
    pub strategy: String,
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 90)]
    pub pool_size: usize,
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Candidate run; BM25 retrieval of `pool-size` documents when absent.
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long, default_value = "negatives.jsonl")]
    pub out: PathBuf,
    /// Write a similarity-band report of the mined negatives.
    #[arg(long)]
    pub bands: Option<PathBuf>,
    /// Scorer for the band report.
    #[arg(long, default_value = "cosine")]
    pub band_scorer: String,
    #[command(flatten)]
    pub embed: EmbedderArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Final-stage run, scored with MRR@k.
    #[arg(long)]
    pub run: PathBuf,
    /// First-stage run, scored with Exist@m; `--run` when absent.
    #[arg(long)]
    pub stage1_run: Option<PathBuf>,
    #[arg(long, default_value_t = 90)]
    pub m: usize,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value = "eval")]
    pub split: String,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Comma-separated ascending bucket edges, in tokens.
    #[arg(long, default_value = "0,50,100,200,400,800")]
    pub edges: String,
    /// Raw QA CSV for answers per question; stored pairs when absent.
    #[arg(long)]
    pub qa: Option<PathBuf>,
    #[arg(long, default_value = "default")]
    pub segmenter: String,
}

#[derive(Args, Debug)]
pub struct LosslabArgs {
    /// `mnrl` or `cosine_mse`.
    #[arg(long, default_value = "mnrl")]
    pub loss: String,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 20.0)]
    pub scale: f64,
}

fn parse_cli(args: Vec<String>) -> Result<Cli> {
    let cmd = Cli::command()
        .args_override_self(true)
        .mut_subcommands(|s| s.args_override_self(true));
    let args = config::inject(&cmd, args)?;
    let matches = cmd.try_get_matches_from(args).unwrap_or_else(|e| e.exit());
    Ok(Cli::from_arg_matches(&matches)?)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = parse_cli(std::env::args().collect())?;
    commands::run(cli)
}
