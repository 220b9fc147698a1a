mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use larag::alignment::Pooling;
use larag::evaluation::Strategy;
use larag::prompt::{Activation, DEFAULT_ADAPTER_HIDDEN};
use larag::retrieval::{DEFAULT_MAX_EXAMPLES, DEFAULT_NBEST, DEFAULT_THRESHOLD};
use larag::vector_index::DEFAULT_K;

/// Token-level retrieval of in-context examples for LLM-based speech recognition.
#[derive(Debug, Parser)]
#[command(name = "larag", version)]
struct Cli {
    /// Worker threads for parallel search (default: all cores).
    #[arg(long, env = "LA_RAG_THREADS", global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Force-align frame-level records and write pooled speech tokens.
    Align(AlignArgs),
    /// Build a datastore (and optionally an IVF index) from a manifest.
    Build(BuildArgs),
    /// Retrieve examples for each query utterance.
    Query(QueryArgs),
    /// Assemble prompts from query results.
    Prompt(PromptArgs),
    /// Character error rate between two line-aligned text files.
    Eval(EvalArgs),
    /// Benchmark retrieval strategies on a synthetic corpus.
    Bench(BenchArgs),
    /// Print datastore statistics as JSON.
    Stats(StatsArgs),
    /// Write a synthetic corpus in the ingestion formats.
    Synth(SynthArgs),
    /// Write the small frame-level demo corpus.
    Toy(ToyArgs),
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Input manifest (JSONL).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory: manifest.jsonl, alignments.jsonl, skipped.jsonl, embeddings/.
    #[arg(long)]
    pub out: PathBuf,
    /// Span pooling: mean, first or max.
    #[arg(long, default_value_t = Pooling::Mean)]
    pub pooling: Pooling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum IndexKind {
    Exact,
    Ivf,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Datastore directory to create or replace.
    #[arg(long)]
    pub datastore: PathBuf,
    #[arg(long, value_enum, default_value_t = IndexKind::Exact)]
    pub index: IndexKind,
    /// IVF cells (default: floor(sqrt(entries))).
    #[arg(long)]
    pub n_clusters: Option<usize>,
    /// IVF cells probed per query (default: ceil(cells / 8)).
    #[arg(long)]
    pub n_probe: Option<usize>,
    #[arg(long, default_value_t = 25)]
    pub kmeans_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = Pooling::Mean)]
    pub pooling: Pooling,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub datastore: PathBuf,
    /// Query manifest (JSONL); frame-level records are aligned to hypothesis 0.
    #[arg(long)]
    pub queries: PathBuf,
    /// N-best lists (JSONL), one per query utterance.
    #[arg(long)]
    pub nbest: PathBuf,
    /// Output directory: results.jsonl, query.json, embeddings/.
    #[arg(long)]
    pub out: PathBuf,
    /// Neighbours per query token.
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    /// Minimum normalized sequence score.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Maximum examples per query (M).
    #[arg(long, default_value_t = DEFAULT_MAX_EXAMPLES)]
    pub examples: usize,
    /// Hypotheses used for pruning (N).
    #[arg(long = "nbest-size", default_value_t = DEFAULT_NBEST)]
    pub nbest_size: usize,
    /// Query every token instead of only N-best disagreements.
    #[arg(long)]
    pub no_prune: bool,
    /// token_level, token_level_no_prune, random, seq_embedding or text.
    #[arg(long, default_value_t = Strategy::TokenLevel)]
    pub strategy: Strategy,
    /// Seed for the random strategy.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Never return the query's own utterance as an example.
    #[arg(long)]
    pub exclude_self: bool,
    /// Token vocabulary ("id<TAB>token" per line) for rendering hypotheses.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = Pooling::Mean)]
    pub pooling: Pooling,
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    /// Output directory of `larag query`.
    #[arg(long)]
    pub query: PathBuf,
    /// Datastore override (default: the one recorded by the query run).
    #[arg(long)]
    pub datastore: Option<PathBuf>,
    /// Adapter weights (.json written by a previous run); random when absent.
    #[arg(long)]
    pub adapter: Option<PathBuf>,
    /// Hidden width of a random adapter.
    #[arg(long, default_value_t = DEFAULT_ADAPTER_HIDDEN)]
    pub hidden: usize,
    /// Output width of a random adapter (LLM embedding size).
    #[arg(long, default_value_t = 4096)]
    pub output_dim: usize,
    #[arg(long, default_value_t = Activation::Relu)]
    pub activation: Activation,
    /// Seed for a random adapter.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Save the adapter used to this path.
    #[arg(long)]
    pub save_adapter: Option<PathBuf>,
    /// Hypotheses placed in each prompt.
    #[arg(long, default_value_t = DEFAULT_NBEST)]
    pub nbest: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Hypothesis text, one utterance per line.
    #[arg(long)]
    pub hyp: PathBuf,
    /// Reference text, line-aligned with --hyp.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub strip_whitespace: bool,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long, default_value_t = 100)]
    pub bases: usize,
    #[arg(long, default_value_t = 8)]
    pub tokens: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Queries per base.
    #[arg(long, default_value_t = 1)]
    pub variants: usize,
    /// Query noise.
    #[arg(long, default_value_t = 0.2)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1000)]
    pub vocab_size: u32,
    #[arg(long, default_value_t = 10)]
    pub distractors: usize,
    /// Tokens each distractor shares with its base.
    #[arg(long, default_value_t = 4)]
    pub shared: usize,
    #[arg(long, default_value_t = 1.0)]
    pub distractor_sigma: f64,
    #[arg(long = "corpus-nbest", default_value_t = DEFAULT_NBEST)]
    pub corpus_nbest: usize,
    /// Positions per query where the N-best lists disagree.
    #[arg(long, default_value_t = 4)]
    pub error_positions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Comma-separated strategies (default: all).
    #[arg(long, value_delimiter = ',')]
    pub strategies: Vec<Strategy>,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_EXAMPLES)]
    pub examples: usize,
    /// Also write bench.tsv and bench.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub datastore: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn error_name(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| e.downcast_ref::<larag::Error>())
        .map_or("Error", larag::Error::name)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: InvalidParams: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Align(a) => commands::align(a),
        Command::Build(a) => commands::build(a),
        Command::Query(a) => commands::query(a),
        Command::Prompt(a) => commands::prompt(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
        Command::Stats(a) => commands::stats(a),
        Command::Synth(a) => commands::synth(a),
        Command::Toy(a) => commands::toy(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e:#}", error_name(&e));
            ExitCode::from(1)
        }
    }
}
