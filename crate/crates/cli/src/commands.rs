use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, ensure, Context, Result};
use claimforge::lm::{load_checkpoint, loss_csv, save_checkpoint, Trainer, DEFAULT_WEIGHTS};
use claimforge::metrics::{adaptation_run, quality_csv, sample_quality, tag_stats_csv, ProbeConfig};
use claimforge::sampling::RNG_ALGORITHM;
use claimforge::segmenter::{normalize_newlines, SplitSet};
use claimforge::synth::{generate_corpus, write_corpus_csv, MINI_CORPUS_SEED, MINI_CORPUS_SIZE};
use claimforge::tokenizer::{read_archive, write_archive};
use claimforge::{
    extract_claims, load_corpus, segment_claim, tag_claim, SamplerConfig, Strategy, SubwordModel, TokenArchive,
    TrainConfig,
};
use claimforge_service::{generate_samples, AppState, Snapshot, DEFAULT_CONTEXT_WINDOW};

use crate::config::{Config, FloatList};
use crate::{
    AdaptArgs, Cli, Command, EncodeArgs, IngestArgs, ModelArgs, SampleArgs, SamplerArgs, SegmentArgs, ServeArgs,
    StatsArgs, SynthArgs, TrainArgs, TrainVocabArgs,
};

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Synth(a) => synth(&cfg, a),
        Command::Ingest(a) => ingest(&cfg, a),
        Command::Segment(a) => segment(&cfg, a),
        Command::TrainVocab(a) => train_vocab(&cfg, a),
        Command::Encode(a) => encode(&cfg, a),
        Command::Train(a) => train(&cfg, a),
        Command::Adapt(a) => adapt(&cfg, a),
        Command::Sample(a) => sample(&cfg, a),
        Command::Stats(a) => stats(&cfg, a),
        Command::Serve(a) => serve(&cfg, a),
    }
}

fn input(cfg: &Config, flag: Option<PathBuf>, key: &str) -> Result<PathBuf> {
    let path: PathBuf = cfg.require(flag, key)?;
    ensure!(path.exists(), "input {} does not exist (--{key})", path.display());
    Ok(path)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(contents)?;
    w.flush()?;
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_owned).collect())
}

fn synth(cfg: &Config, a: SynthArgs) -> Result<()> {
    let out: PathBuf = cfg.require(a.corpus, "corpus")?;
    let n = cfg.or(a.records, "records", MINI_CORPUS_SIZE)?;
    let seed = cfg.or(a.seed, "seed", MINI_CORPUS_SEED)?;
    let records = generate_corpus(n, seed);
    write_corpus_csv(&records, create(&out)?)?;
    println!("wrote {n} synthetic claims (seed {seed}) to {}", out.display());
    Ok(())
}

fn ingest(cfg: &Config, a: IngestArgs) -> Result<()> {
    let path = input(cfg, a.corpus, "corpus")?;
    let (_, stats) = load_corpus(&path, cfg.get(a.limit, "limit")?)?;
    println!("rows read: {}", stats.rows_read());
    println!("records loaded: {}", stats.records_loaded);
    println!("records rejected: {}", stats.records_rejected);
    for (reason, count) in &stats.rejection_reasons {
        println!("  {reason}: {count}");
    }
    Ok(())
}

fn segment(cfg: &Config, a: SegmentArgs) -> Result<()> {
    let path = input(cfg, a.corpus, "corpus")?;
    let out: PathBuf = cfg.require(a.tagged, "tagged")?;
    let split: SplitSet = cfg
        .get(a.split_punct, "split-punct")?
        .map(|s: String| s.parse())
        .transpose()
        .map_err(|e| anyhow!("--split-punct: {e}"))?
        .unwrap_or_default();
    let (records, stats) = load_corpus(&path, cfg.get(a.limit, "limit")?)?;
    let mut w = create(&out)?;
    let mut spans = 0usize;
    for r in &records {
        let claim = segment_claim(&normalize_newlines(&r.claim_text), &split)
            .with_context(|| format!("segmenting patent {}", r.patent_id))?;
        spans += claim.spans().len();
        writeln!(w, "{}", tag_claim(&claim))?;
    }
    w.flush()?;
    println!(
        "segmented {} claims into {spans} spans ({} rows rejected) -> {}",
        records.len(),
        stats.records_rejected,
        out.display()
    );
    Ok(())
}

fn train_vocab(cfg: &Config, a: TrainVocabArgs) -> Result<()> {
    let path = input(cfg, a.tagged, "tagged")?;
    let out: PathBuf = cfg.require(a.vocab, "vocab")?;
    let target = cfg.or(a.vocab_size, "vocab-size", 2000)?;
    let lines = read_lines(&path)?;
    let coder = SubwordModel::train(&lines, target)?;
    write_file(&out, coder.to_vocab_string().as_bytes())?;
    println!(
        "trained {} merges, vocab size {} -> {}",
        coder.merges().len(),
        coder.vocab_size(),
        out.display()
    );
    Ok(())
}

fn encode(cfg: &Config, a: EncodeArgs) -> Result<()> {
    let path = input(cfg, a.tagged, "tagged")?;
    let coder = SubwordModel::load(input(cfg, a.vocab, "vocab")?)?;
    let out: PathBuf = cfg.require(a.archive, "archive")?;
    let sequences: Vec<Vec<u32>> = read_lines(&path)?.iter().map(|l| coder.encode(l)).collect();
    let archive = TokenArchive::new(coder.vocab_size(), coder.special_ids(), sequences);
    write_archive(&out, &archive)?;
    println!(
        "encoded {} sequences, {} tokens -> {}",
        archive.sequences.len(),
        archive.token_count(),
        out.display()
    );
    Ok(())
}

fn train_config(cfg: &Config, m: ModelArgs, interval: Option<u64>) -> Result<TrainConfig> {
    let defaults = TrainConfig::default();
    let order = cfg.or(m.order, "order", defaults.order)?;
    let weights = match cfg.get::<FloatList>(m.weights.map(|w| w.parse()).transpose().map_err(|e| anyhow!("--weights: {e}"))?, "weights")? {
        Some(w) => w.0,
        None if order == defaults.order => DEFAULT_WEIGHTS.to_vec(),
        None => bail!("--order {order} needs --weights with {} entries", order + 1),
    };
    let config = TrainConfig {
        order,
        weights,
        checkpoint_interval: cfg.or(interval, "checkpoint-interval", defaults.checkpoint_interval)?,
        heldout_fraction: cfg.or(m.heldout_fraction, "heldout-fraction", defaults.heldout_fraction)?,
        seed: cfg.or(m.seed, "seed", defaults.seed)?,
        learning_rate: cfg.or(m.learning_rate, "learning-rate", defaults.learning_rate)?,
        batch_size: cfg.or(m.batch_size, "batch-size", defaults.batch_size)?,
    };
    config.validate()?;
    Ok(config)
}

fn sampler_config(cfg: &Config, s: SamplerArgs, default: Strategy, seed: u64) -> Result<SamplerConfig> {
    let name = cfg.or(s.strategy, "strategy", default.name().to_owned())?;
    let strategy = match name.as_str() {
        "top_k" => Strategy::TopK {
            k: cfg.or(s.k, "k", Strategy::DEFAULT_K)?,
        },
        "top_p" => Strategy::TopP {
            p: cfg.or(s.p, "p", Strategy::DEFAULT_P)?,
        },
        "dynamic_kp" => Strategy::DynamicKp {
            rho: cfg.or(s.rho, "rho", Strategy::DEFAULT_RHO)?,
            cap: cfg.or(s.cap, "cap", Strategy::DEFAULT_CAP)?,
        },
        other => bail!("unknown strategy `{other}` (expected top_k, top_p or dynamic_kp)"),
    };
    let config = SamplerConfig {
        strategy,
        temperature: cfg.or(s.temperature, "temperature", 1.0)?,
        seed,
    };
    config.validate()?;
    Ok(config)
}

fn created_at(cfg: &Config, flag: Option<u64>) -> Result<u64> {
    if let Some(t) = cfg.get(flag, "created-at")? {
        return Ok(t);
    }
    match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => v.trim().parse().context("SOURCE_DATE_EPOCH"),
        Err(_) => Ok(0),
    }
}

fn train(cfg: &Config, a: TrainArgs) -> Result<()> {
    let archive = read_archive(input(cfg, a.archive, "archive")?)?;
    let dir: PathBuf = cfg.or(a.checkpoints, "checkpoints", PathBuf::from("checkpoints"))?;
    let loss_path: PathBuf = cfg.or(a.loss_log, "loss-log", PathBuf::from("reports/loss.csv"))?;
    let stamp = created_at(cfg, a.created_at)?;
    let config = train_config(cfg, a.model, a.checkpoint_interval)?;
    let interval = config.checkpoint_interval;

    let mut trainer = Trainer::new(&archive.sequences, config, archive.vocab_size)?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut rows = trainer.losses()?;
    while !trainer.is_done() {
        trainer.advance(interval)?;
        rows.extend(trainer.losses()?);
        let path = dir.join(format!("ckpt-{:08}.pcck", trainer.step()));
        save_checkpoint(trainer.model(), trainer.step(), stamp, &path)?;
    }
    save_checkpoint(trainer.model(), trainer.step(), stamp, dir.join("final.pcck"))?;
    write_file(&loss_path, loss_csv(&rows).as_bytes())?;
    if let Some(last) = rows.iter().rev().find(|r| r.split == claimforge::lm::Split::Heldout) {
        println!("held-out cross-entropy at step {}: {:.4} nats", last.step, last.cross_entropy);
    }
    println!(
        "trained on {} sequences ({} held out) -> {}",
        trainer.step(),
        trainer.heldout().len(),
        dir.join("final.pcck").display()
    );
    Ok(())
}

fn adapt(cfg: &Config, a: AdaptArgs) -> Result<()> {
    let archive = read_archive(input(cfg, a.archive, "archive")?)?;
    let out: PathBuf = cfg.or(a.tag_stats, "tag-stats", PathBuf::from("reports/tag_stats.csv"))?;
    let loss_path: PathBuf = cfg.or(a.loss_log, "loss-log", PathBuf::from("reports/adapt_loss.csv"))?;
    let train = train_config(cfg, a.model, None)?;
    let defaults = ProbeConfig::default();
    let probe = ProbeConfig {
        checkpoint_every: cfg.or(a.checkpoint_every, "checkpoint-every", defaults.checkpoint_every)?,
        samples_per_checkpoint: cfg.or(a.samples_per_checkpoint, "samples-per-checkpoint", defaults.samples_per_checkpoint)?,
        tokens_per_sample: cfg.or(a.tokens_per_sample, "tokens-per-sample", defaults.tokens_per_sample)?,
        max_steps: cfg.get(a.max_steps, "max-steps")?,
    };
    let base = ProbeConfig::default_sampler(train.seed);
    let sampler = sampler_config(cfg, a.sampler, base.strategy, train.seed)?;
    let report = adaptation_run(&archive, &train, &sampler, &probe)?;
    write_file(&out, tag_stats_csv(&report.tag_rows).as_bytes())?;
    write_file(&loss_path, loss_csv(&report.loss_rows).as_bytes())?;
    let (first, last) = (&report.tag_rows[0], report.tag_rows.last().unwrap());
    println!(
        "{} probes; end tags {} at step 0, {} at step {} -> {}",
        report.tag_rows.len(),
        first.counts.end,
        last.counts.end,
        last.step,
        out.display()
    );
    Ok(())
}

fn load_snapshot(checkpoint: &Path, vocab: &Path) -> Result<Snapshot> {
    let ck = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let coder = SubwordModel::load(vocab).with_context(|| format!("loading {}", vocab.display()))?;
    ensure!(
        coder.vocab_size() == ck.model.vocab_size(),
        "vocab size {} does not match checkpoint vocab size {}",
        coder.vocab_size(),
        ck.model.vocab_size()
    );
    Ok(Snapshot {
        model: ck.model,
        coder,
        step: ck.step,
    })
}

fn sample(cfg: &Config, a: SampleArgs) -> Result<()> {
    let checkpoint = input(cfg, a.checkpoint, "checkpoint")?;
    let vocab = input(cfg, a.vocab, "vocab")?;
    let out: PathBuf = cfg.or(a.generations, "generations", PathBuf::from("generations.txt"))?;
    let n = cfg.or(a.n, "n", 1usize)?;
    let max_tokens = cfg.or(a.max_tokens, "max-tokens", 256usize)?;
    let window = cfg.or(a.context_window, "context-window", DEFAULT_CONTEXT_WINDOW)?;
    let prompt: Option<String> = cfg.get(a.prompt, "prompt")?;
    let seed = cfg.or(a.seed, "seed", 0u64)?;
    ensure!(n >= 1, "--n must be at least 1");
    ensure!(max_tokens >= 1, "--max-tokens must be at least 1");
    ensure!(window >= 2, "--context-window must be at least 2");
    let sampler = sampler_config(cfg, a.sampler, Strategy::dynamic_kp(), seed)?;

    let snap = load_snapshot(&checkpoint, &vocab)?;
    let batch = generate_samples(&snap, &sampler, prompt.as_deref(), n, max_tokens, window)?;
    let mut w = create(&out)?;
    for line in batch.tagged_lines() {
        writeln!(w, "{line}")?;
    }
    w.flush()?;

    let sidecar = out.with_extension("json");
    let meta = serde_json::json!({
        "checkpoint": checkpoint.display().to_string(),
        "checkpoint_step": snap.step,
        "vocab": vocab.display().to_string(),
        "rng": RNG_ALGORITHM,
        "seed": seed,
        "strategy": sampler.strategy,
        "temperature": sampler.temperature,
        "samples": n,
        "max_tokens": max_tokens,
        "context_window": window,
        "prompt": prompt,
        "effective_prompt_tokens": batch.effective_prompt_tokens,
        "token_counts": batch.samples.iter().map(|s| s.token_count).collect::<Vec<_>>(),
    });
    write_file(&sidecar, format!("{}\n", serde_json::to_string_pretty(&meta)?).as_bytes())?;
    let complete: usize = batch.samples.iter().map(|s| s.claims.iter().filter(|c| c.complete).count()).sum();
    println!("wrote {n} generations ({complete} complete claims) -> {}", out.display());
    Ok(())
}

fn stats(cfg: &Config, a: StatsArgs) -> Result<()> {
    let path = input(cfg, a.generations, "generations")?;
    let coder = SubwordModel::load(input(cfg, a.vocab, "vocab")?)?;
    let out: PathBuf = cfg.or(a.quality, "quality", PathBuf::from("reports/quality.csv"))?;
    let label = match cfg.get(a.batch, "batch")? {
        Some(b) => b,
        None => path.file_name().map_or_else(String::new, |f| f.to_string_lossy().into_owned()),
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let q = sample_quality(&extract_claims(&text), &coder);
    write_file(&out, quality_csv(&[(label, q.clone())]).as_bytes())?;
    println!(
        "{} claims ({} complete), mean {:.1} spans -> {}",
        q.claim_count,
        q.complete_count,
        q.mean_span_count,
        out.display()
    );
    Ok(())
}

fn serve(cfg: &Config, a: ServeArgs) -> Result<()> {
    let checkpoint = input(cfg, a.checkpoint, "checkpoint")?;
    let vocab = input(cfg, a.vocab, "vocab")?;
    let bind: SocketAddr = cfg.or(a.bind, "bind", "127.0.0.1:8080".to_owned())?.parse().context("--bind")?;
    let window = cfg.or(a.context_window, "context-window", DEFAULT_CONTEXT_WINDOW)?;
    ensure!(window >= 2, "--context-window must be at least 2");

    let state = Arc::new(AppState::new(Some(load_snapshot(&checkpoint, &vocab)?), window));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        spawn_reloader(state.clone(), checkpoint, vocab);
        eprintln!("listening on http://{bind}");
        claimforge_service::serve(bind, state).await
    })?;
    Ok(())
}

/// SIGHUP reloads the checkpoint and swaps it in between requests.
#[cfg(unix)]
fn spawn_reloader(state: Arc<AppState>, checkpoint: PathBuf, vocab: PathBuf) {
    use tokio::signal::unix::{signal, SignalKind};
    tokio::spawn(async move {
        let Ok(mut hup) = signal(SignalKind::hangup()) else { return };
        while hup.recv().await.is_some() {
            match load_snapshot(&checkpoint, &vocab) {
                Ok(snap) => {
                    eprintln!("reloaded {} (step {})", checkpoint.display(), snap.step);
                    state.slot.swap(snap);
                }
                Err(e) => eprintln!("reload failed, keeping current model: {e:#}"),
            }
        }
    });
}

#[cfg(not(unix))]
fn spawn_reloader(_: Arc<AppState>, _: PathBuf, _: PathBuf) {}
