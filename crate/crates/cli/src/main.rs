use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod commands;

/// Cross-lingual debunked-narrative retrieval.
#[derive(Debug, Parser)]
#[command(name = "xdnr", version)]
struct Cli {
    /// Directory for all output files (created if missing).
    #[arg(long, global = true, default_value = "xdnr-out")]
    out_dir: PathBuf,
    /// Upper bound on worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// Build the BM25 inverted index over debunks.
    IndexLexical(IndexLexicalArgs),
    /// Load debunk embeddings, optionally project them, and store them in binary form.
    IndexDense(IndexDenseArgs),
    /// Hashed character-trigram embeddings for debunks and/or queries.
    EmbedHash(EmbedHashArgs),
    /// Train a projection head on labelled query/debunk pairs.
    Train(TrainArgs),
    /// First-stage retrieval for every query.
    Search(SearchArgs),
    /// Re-rank the head of an existing run.
    Rerank(RerankArgs),
    /// Score a run against qrels.
    Evaluate(EvaluateArgs),
    /// Nearest-claim candidate pairs for annotation.
    Candidates(CandidatesArgs),
    /// Weighted-Jaccard vocabulary overlap of two corpora.
    Overlap(OverlapArgs),
    /// Fleiss' kappa from an annotation count table.
    Kappa(KappaArgs),
    /// Publication gap between debunks and the claims they match.
    Timegap(TimegapArgs),
    /// Per-query retrieval latency.
    Bench(BenchArgs),
    /// Load and cross-check the dataset files.
    ValidateData(ValidateDataArgs),
}

#[derive(Debug, Args, Serialize)]
struct DataArgs {
    #[arg(long)]
    debunks: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct IndexLexicalArgs {
    #[arg(long)]
    debunks: PathBuf,
    /// English translations of debunks (JSONL {"id","text_en"}).
    #[arg(long)]
    translations: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct IndexDenseArgs {
    /// Debunk embeddings, binary or JSONL.
    #[arg(long)]
    embeddings: PathBuf,
    /// Projection head checkpoint applied to every row.
    #[arg(long)]
    head: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct EmbedHashArgs {
    #[arg(long, required_unless_present = "queries")]
    debunks: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    dim: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write JSONL copies.
    #[arg(long)]
    jsonl: bool,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    splits: PathBuf,
    #[arg(long)]
    query_emb: PathBuf,
    #[arg(long)]
    debunk_emb: PathBuf,
    /// JSON file with training options; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 10)]
    negatives: usize,
    /// Use judged-irrelevant debunks as extra negatives.
    #[arg(long)]
    irrelevant_negatives: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum StageKind {
    Bm25,
    Dense,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum SplitPart {
    All,
    Train,
    Validation,
    Test,
}

#[derive(Debug, Args, Serialize)]
struct StageArgs {
    #[arg(long, value_enum, default_value = "bm25")]
    stage: StageKind,
    /// Inverted index built by `index-lexical`.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Debunk JSONL; a BM25 index is built on the fly when --index is absent.
    #[arg(long)]
    debunks: Option<PathBuf>,
    #[arg(long, default_value_t = 1.2)]
    k1: f64,
    #[arg(long, default_value_t = 0.75)]
    b: f64,
    /// Search with the queries' English translations.
    #[arg(long)]
    translated: bool,
    /// Query translations side file (JSONL {"id","text_en"}).
    #[arg(long)]
    translations: Option<PathBuf>,
    /// Debunk embeddings for dense search.
    #[arg(long)]
    debunk_emb: Option<PathBuf>,
    /// Query embeddings; when absent queries are hash-embedded.
    #[arg(long)]
    query_emb: Option<PathBuf>,
    /// Projection head applied to query vectors (debunk vectors must already be projected).
    #[arg(long)]
    head: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    hash_dim: usize,
    #[arg(long, default_value_t = 1)]
    hash_seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct SearchArgs {
    #[arg(long)]
    queries: PathBuf,
    #[command(flatten)]
    stage: StageArgs,
    #[arg(long, default_value_t = 100)]
    top_k: usize,
    /// Restrict to one part of the split (needs --splits and --qrels).
    #[arg(long, value_enum, default_value = "all")]
    split: SplitPart,
    #[arg(long)]
    splits: Option<PathBuf>,
    #[arg(long)]
    qrels: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ScorerArg {
    PassThrough,
    OracleQrels,
    ExternalPair,
    ExternalListwise,
}

#[derive(Debug, Args, Serialize)]
struct ScorerArgs {
    #[arg(long, value_enum, default_value = "pass-through")]
    scorer: ScorerArg,
    /// Number of leading candidates to re-rank.
    #[arg(long, default_value_t = 20)]
    depth: usize,
    /// Scorer executable for the external scorers.
    #[arg(long)]
    scorer_cmd: Option<PathBuf>,
    /// Argument passed to the scorer executable (repeatable).
    #[arg(long = "scorer-arg", allow_hyphen_values = true)]
    scorer_args: Vec<String>,
    /// Seconds to wait for each scorer response.
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
    /// Largest candidate list sent in one listwise request.
    #[arg(long)]
    max_candidates: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct RerankArgs {
    /// First-stage run (JSONL).
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    debunks: PathBuf,
    /// Qrels, needed by the oracle scorer.
    #[arg(long)]
    qrels: Option<PathBuf>,
    #[command(flatten)]
    scorer: ScorerArgs,
    /// Keep the first-stage list when the scorer fails instead of aborting.
    #[arg(long)]
    fallback: bool,
}

#[derive(Debug, Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Queries file, for the per-language breakdown.
    #[arg(long)]
    queries: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct CandidatesArgs {
    /// Claim embeddings (binary or JSONL).
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, default_value_t = 7)]
    depth: usize,
    #[arg(long, default_value_t = 0.6)]
    threshold: f64,
}

#[derive(Debug, Args, Serialize)]
struct OverlapArgs {
    /// Text file (one document per line) or JSONL with "text" or "claim"/"title".
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    train: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct KappaArgs {
    /// CSV with header item_id,cat_1,...,cat_n.
    #[arg(long)]
    csv: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct TimegapArgs {
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Debug, Args, Serialize)]
struct BenchArgs {
    #[arg(long)]
    queries: PathBuf,
    #[command(flatten)]
    stage: StageArgs,
    #[arg(long, default_value_t = 100)]
    top_k: usize,
    /// Re-ranker after the first stage; omitted means first stage only.
    #[arg(long, value_enum)]
    rerank: Option<ScorerArg>,
    #[arg(long, default_value_t = 20)]
    depth: usize,
    #[arg(long)]
    qrels: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Benchmark only the first N queries.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct ValidateDataArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Also check the split and training-pair counts.
    #[arg(long)]
    splits: Option<PathBuf>,
    /// Fail unless the counts match the released MMTweets files.
    #[arg(long)]
    expect_mmtweets: bool,
}

/// Failure classes, one per exit code.
#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Scorer(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Scorer(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Data(e) | Failure::Scorer(e) => e,
        }
    }
}

impl From<xdnr::Error> for Failure {
    fn from(e: xdnr::Error) -> Self {
        match e {
            xdnr::Error::InvalidArgument(_) => Failure::Usage(e.into()),
            other => Failure::Data(other.into()),
        }
    }
}

impl From<xdnr::pipeline::ScorerError> for Failure {
    fn from(e: xdnr::pipeline::ScorerError) -> Self {
        Failure::Scorer(e.into())
    }
}

impl From<xdnr::pipeline::RetrieveError> for Failure {
    fn from(e: xdnr::pipeline::RetrieveError) -> Self {
        match e {
            xdnr::pipeline::RetrieveError::Data(d) => d.into(),
            s @ xdnr::pipeline::RetrieveError::Scorer { .. } => Failure::Scorer(s.into()),
        }
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow::anyhow!(msg.into()))
}

fn data(msg: impl Into<String>) -> Failure {
    Failure::Data(anyhow::anyhow!(msg.into()))
}

/// Seed from `XDNR_SEED` when set, else the configured one.
fn effective_seed(configured: u64) -> CmdResult<u64> {
    match std::env::var("XDNR_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| usage(format!("XDNR_SEED must be an unsigned integer, got {s:?}"))),
        Err(_) => Ok(configured),
    }
}

fn require_files<'a>(paths: impl IntoIterator<Item = &'a Path>) -> CmdResult {
    for p in paths {
        if !p.is_file() {
            return Err(data(format!("input file not found: {}", p.display())));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
