//! `claimforge`: corpus CSV to generated claims.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "claimforge", version, about = "Patent claim segmentation, modeling and sampling")]
struct Cli {
    /// Flat key=value file with defaults for any flag.
    #[arg(long, global = true, env = "CLAIMFORGE_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus CSV from the template grammar.
    Synth(SynthArgs),
    /// Validate a corpus CSV and print a summary.
    Ingest(IngestArgs),
    /// Split claims into spans and write one tagged claim per line.
    Segment(SegmentArgs),
    /// Train a subword vocabulary on tagged text.
    TrainVocab(TrainVocabArgs),
    /// Encode tagged text into a token archive.
    Encode(EncodeArgs),
    /// Train the n-gram model; writes checkpoints and a loss CSV.
    Train(TrainArgs),
    /// Train with generation probes; writes tag counts per checkpoint.
    Adapt(AdaptArgs),
    /// Generate claims from a checkpoint.
    Sample(SampleArgs),
    /// Quality statistics for a generations file.
    Stats(StatsArgs),
    /// Serve generations over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, visible_alias = "out")]
    corpus: Option<PathBuf>,
    /// Number of claims.
    #[arg(long)]
    records: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long, visible_alias = "in")]
    corpus: Option<PathBuf>,
    /// Stop after this many valid records.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    #[arg(long, visible_alias = "in")]
    corpus: Option<PathBuf>,
    #[arg(long)]
    limit: Option<usize>,
    /// Characters that end a span when followed by a non-space.
    #[arg(long)]
    split_punct: Option<String>,
    #[arg(long, visible_alias = "out")]
    tagged: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainVocabArgs {
    #[arg(long, visible_alias = "in")]
    tagged: Option<PathBuf>,
    #[arg(long, visible_alias = "out")]
    vocab: Option<PathBuf>,
    #[arg(long)]
    vocab_size: Option<u32>,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long, visible_alias = "in")]
    tagged: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, visible_alias = "out")]
    archive: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    order: Option<usize>,
    /// Interpolation weights, highest order first, uniform last.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    heldout_fraction: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SamplerArgs {
    /// top_k, top_p or dynamic_kp.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, visible_alias = "in")]
    archive: Option<PathBuf>,
    /// Output directory for checkpoint files.
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    #[arg(long)]
    loss_log: Option<PathBuf>,
    #[arg(long)]
    checkpoint_interval: Option<u64>,
    /// Unix seconds stored in checkpoints (default: SOURCE_DATE_EPOCH or 0).
    #[arg(long)]
    created_at: Option<u64>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct AdaptArgs {
    #[arg(long, visible_alias = "in")]
    archive: Option<PathBuf>,
    #[arg(long, visible_alias = "out")]
    tag_stats: Option<PathBuf>,
    #[arg(long)]
    loss_log: Option<PathBuf>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    samples_per_checkpoint: Option<usize>,
    #[arg(long)]
    tokens_per_sample: Option<usize>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, visible_alias = "out")]
    generations: Option<PathBuf>,
    /// Number of generations.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    max_tokens: Option<usize>,
    /// Continue this text instead of sampling unconditionally.
    #[arg(long)]
    prompt: Option<String>,
    #[arg(long)]
    context_window: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    sampler: SamplerArgs,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long, visible_alias = "in")]
    generations: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, visible_alias = "out")]
    quality: Option<PathBuf>,
    /// Row label (default: the generations file name).
    #[arg(long)]
    batch: Option<String>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    bind: Option<String>,
    #[arg(long)]
    context_window: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("claimforge: {e:#}");
            ExitCode::FAILURE
        }
    }
}
