//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs under `cargo test` (no libtest harness, so the
//! report is never captured).

use std::collections::BTreeSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use claimforge::lm::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, Trainer};
use claimforge::metrics::{adaptation_run, count_special_tags, tag_stats_csv, ProbeConfig};
use claimforge::sampling::{apply_temperature, filter_dynamic_kp, filter_top_k, filter_top_p, LogitVector};
use claimforge::segmenter::SplitSet;
use claimforge::synth::generate_corpus;
use claimforge::tokenizer::{read_archive, write_archive, ArchiveError};
use claimforge::{
    extract_claims, load_corpus, segment_claim, tag_claim, NGramModel, SamplerConfig, SpecialIds, Strategy,
    SubwordModel, TokenArchive, TrainConfig,
};
use claimforge_service::{router, AppState, Snapshot};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use tower::ServiceExt;

type Outcome = Result<String, String>;
type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_claimforge"))
}

fn run(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = bin()
        .current_dir(dir)
        .env_remove("CLAIMFORGE_CONFIG")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("`claimforge {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn mini_corpus() -> Vec<claimforge::ClaimRecord> {
    load_corpus(root().join("data/mini_corpus.csv"), None).unwrap().0
}

fn tagged(records: &[claimforge::ClaimRecord]) -> Vec<String> {
    records
        .iter()
        .map(|r| tag_claim(&segment_claim(&r.claim_text, &SplitSet::default()).unwrap()).into_string())
        .collect()
}

/// Pipeline artifacts built once through the CLI from the mini-corpus.
struct Pipeline {
    _dir: tempfile::TempDir,
    path: PathBuf,
}

impl Pipeline {
    fn build() -> Result<Self, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let path = dir.path().to_owned();
        let corpus = root().join("data/mini_corpus.csv");
        let corpus = corpus.to_str().unwrap();
        run(&path, &["segment", "--in", corpus, "--out", "tagged.txt"])?;
        run(&path, &["train-vocab", "--in", "tagged.txt", "--out", "vocab.txt", "--vocab-size", "512"])?;
        run(&path, &["encode", "--in", "tagged.txt", "--vocab", "vocab.txt", "--out", "claims.pcta"])?;
        run(&path, &["train", "--archive", "claims.pcta", "--checkpoint-interval", "60"])?;
        Ok(Self { _dir: dir, path })
    }

    fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }
}

fn fuzz_text(rng: &mut ChaCha20Rng) -> String {
    const ALPHABET: &[char] = &[',', ';', ':', ' ', ' ', 'a', 'b', 'Z', '.', '\t', 'é', '1'];
    let len = rng.random_range(1..=100);
    (0..len).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())]).collect()
}

fn c1_losslessness() -> Outcome {
    let start = Instant::now();
    let mut inputs: Vec<String> = mini_corpus().into_iter().map(|r| r.claim_text).collect();
    let n_corpus = inputs.len();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    inputs.extend((0..1000).map(|_| fuzz_text(&mut rng)));
    for t in &inputs {
        let seg = segment_claim(t, &SplitSet::default()).map_err(|e| format!("{e} on {t:?}"))?;
        check!(seg.spans().concat() == *t, "spans do not rebuild {t:?}");
    }
    let elapsed = start.elapsed();
    check!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("{n_corpus} corpus claims + 1000 fuzzed strings in {elapsed:.2?}"))
}

fn c2_tag_round_trip() -> Outcome {
    let records = mini_corpus();
    for r in &records {
        let seg = segment_claim(&r.claim_text, &SplitSet::default()).unwrap();
        let back = extract_claims(tag_claim(&seg).as_str());
        check!(back.len() == 1 && back[0].complete, "patent {}: {back:?}", r.patent_id);
        check!(back[0].spans == seg.spans(), "patent {}: span mismatch", r.patent_id);
    }
    Ok(format!("{} of {} claims", records.len(), records.len()))
}

fn c3_golden() -> Outcome {
    let text = fs::read_to_string(root().join("crates/core/tests/fixtures/early_generation.txt")).unwrap();
    let text = text.trim_end_matches('\n');
    let claims = extract_claims(text);
    check!(claims.len() == 1, "{} claims", claims.len());
    check!(claims[0].complete, "claim not complete");
    check!(claims[0].spans.len() == 5, "{} spans", claims[0].spans.len());
    let specials = SpecialIds::new();
    let c = count_special_tags(&[SubwordModel::base().encode(text)], specials);
    check!((c.start, c.sep, c.end) == (1, 4, 1), "tag counts {c:?}");
    Ok("1 complete claim, 5 spans, tags (1, 4, 1)".into())
}

fn random_logits(rng: &mut ChaCha20Rng, v: usize) -> LogitVector {
    let quantise = rng.random_bool(1.0 / 3.0);
    LogitVector::new(
        (0..v)
            .map(|_| {
                let x: f64 = rng.random_range(-8.0..8.0);
                if quantise {
                    (x * 2.0).round() / 2.0
                } else {
                    x
                }
            })
            .collect(),
    )
    .unwrap()
}

fn dynamic_kp_oracle(logits: &[f64], rho: f64, cap: usize) -> BTreeSet<u32> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let probs: Vec<f64> = logits.iter().map(|l| (l - max).exp() / z).collect();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    order.truncate(cap);
    let threshold = rho * probs[order[0]];
    order.into_iter().filter(|&i| probs[i] >= threshold).map(|i| i as u32).collect()
}

fn set(ids: &[u32]) -> BTreeSet<u32> {
    ids.iter().copied().collect()
}

fn c4_dynamic_kp_oracle() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(2020);
    for i in 0..1000 {
        let v = rng.random_range(2..=500);
        let logits = random_logits(&mut rng, v);
        let kept = set(filter_dynamic_kp(&logits, 0.1, 100).kept());
        check!(kept == dynamic_kp_oracle(logits.values(), 0.1, 100), "vector {i} (V={v}) differs");
    }
    Ok("1000 vectors, exact set equality".into())
}

fn c5_filter_properties() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for n in 0..200 {
        let v = rng.random_range(2..=300);
        let logits = random_logits(&mut rng, v);

        let p_sets: Vec<_> = (1..=10).map(|i| set(filter_top_p(&logits, f64::from(i) / 10.0).kept())).collect();
        check!(p_sets.windows(2).all(|w| w[0].is_subset(&w[1])), "top_p nesting, vector {n}");
        let k_sets: Vec<_> = (1..=v).map(|k| set(filter_top_k(&logits, k).kept())).collect();
        check!(k_sets.windows(2).all(|w| w[0].is_subset(&w[1])), "top_k nesting, vector {n}");
        check!(k_sets[v - 1].len() == v, "top_k(V) is not the identity, vector {n}");

        let top = logits.argmax() as u32;
        for t in [0.1, 1.0, 10.0] {
            let scaled = apply_temperature(&logits, t).unwrap();
            for f in [filter_top_k(&scaled, 40), filter_top_p(&scaled, 0.9), filter_dynamic_kp(&scaled, 0.1, 100)] {
                check!(f.kept().contains(&top), "argmax dropped, vector {n}, T={t}");
            }
        }
        for c in [-5.0, 7.0] {
            let shifted = LogitVector::new(logits.values().iter().map(|x| x + c).collect()).unwrap();
            check!(filter_top_k(&shifted, 40).kept() == filter_top_k(&logits, 40).kept(), "top_k shift {c}");
            check!(filter_top_p(&shifted, 0.9).kept() == filter_top_p(&logits, 0.9).kept(), "top_p shift {c}");
            check!(
                filter_dynamic_kp(&shifted, 0.1, 100).kept() == filter_dynamic_kp(&logits, 0.1, 100).kept(),
                "dynamic_kp shift {c}"
            );
        }
    }
    Ok("200 vectors: nesting, identity, argmax at T in {0.1, 1, 10}, shifts {-5, 7}".into())
}

fn c6_worked_cases() -> Outcome {
    let l = LogitVector::from_probs(&[0.5, 0.3, 0.15, 0.04, 0.01]).unwrap();
    let d = filter_dynamic_kp(&l, 0.1, 100);
    let p = filter_top_p(&l, 0.9);
    let k = filter_top_k(&l, 2);
    check!(d.kept() == [0, 1, 2], "dynamic_kp kept {:?}", d.kept());
    check!(p.kept() == [0, 1, 2], "top_p kept {:?}", p.kept());
    check!(k.kept() == [0, 1], "top_k kept {:?}", k.kept());
    Ok("dynamic_kp {0,1,2}, top_p {0,1,2}, top_k {0,1}".into())
}

fn c7_ngram() -> Outcome {
    for v in [7u32, 512, 2000] {
        let m = NGramModel::new(TrainConfig::default(), v).unwrap();
        let ce = m.cross_entropy(&[vec![0u32, 1, 2, 3, 4, 5, 6]]).unwrap();
        check!(ce == f64::from(v).ln(), "untrained V={v}: {ce} != ln V");
    }

    let config = TrainConfig { order: 2, weights: vec![0.8, 0.15, 0.05], ..TrainConfig::default() };
    let mut hand = NGramModel::new(config, 2).unwrap();
    hand.update(&[0, 1, 0, 1, 0, 1]).unwrap();
    let p = hand.next_distribution(&[0])[1];
    check!((p - 0.9).abs() <= 1e-12, "p(y|x) = {p}");

    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let mut m = NGramModel::new(TrainConfig::default(), 60).unwrap();
    for _ in 0..30 {
        let seq: Vec<u32> = (0..rng.random_range(1..80)).map(|_| rng.random_range(0..20) * rng.random_range(1..4)).collect();
        m.update(&seq).unwrap();
    }
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let ctx: Vec<u32> = (0..rng.random_range(0..6)).map(|_| rng.random_range(0..60)).collect();
        worst = worst.max((m.next_distribution(&ctx).iter().sum::<f64>() - 1.0).abs());
    }
    check!(worst <= 1e-9, "distribution sum off by {worst:e}");
    Ok(format!("ln V exact, p(y|x) = {p:.12}, max |sum - 1| = {worst:.1e}"))
}

fn c8_adaptation() -> Outcome {
    let start = Instant::now();
    let texts = tagged(&generate_corpus(5000, 11));
    let coder = SubwordModel::train(&texts, 2000).unwrap();
    let seqs = texts.iter().map(|t| coder.encode(t)).collect();
    let archive = TokenArchive::new(coder.vocab_size(), coder.special_ids(), seqs);
    let train = TrainConfig { heldout_fraction: 0.0, seed: 1, ..TrainConfig::default() };
    // Full-support sampling: see the README on why the top_k 40 probe
    // default cannot give the uniform 1/V rate at step 0.
    let sampler = SamplerConfig {
        strategy: Strategy::TopK { k: coder.vocab_size() as usize },
        temperature: 1.0,
        seed: 1,
    };
    let probe = ProbeConfig { checkpoint_every: 1000, ..ProbeConfig::default() };
    let report = adaptation_run(&archive, &train, &sampler, &probe).map_err(|e| e.to_string())?;
    let (first, last) = (&report.tag_rows[0], report.tag_rows.last().unwrap());
    let elapsed = start.elapsed();
    check!(last.step == 5000, "final step {}", last.step);
    check!(
        last.counts.end >= 5 * first.counts.end,
        "end count {} at step 0, {} at the end",
        first.counts.end,
        last.counts.end
    );
    check!(last.samples_with_end * 5 >= last.samples * 4, "{} of {} samples end", last.samples_with_end, last.samples);
    check!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    Ok(format!(
        "V={}, end tags {} -> {} ({:.1}x), {}/{} samples end, {elapsed:.1?}",
        coder.vocab_size(),
        first.counts.end,
        last.counts.end,
        last.counts.end as f64 / first.counts.end.max(1) as f64,
        last.samples_with_end,
        last.samples
    ))
}

fn c9_loss_curve() -> Outcome {
    let texts = tagged(&mini_corpus());
    let coder = SubwordModel::train(&texts, 512).unwrap();
    let seqs: Vec<Vec<u32>> = texts.iter().map(|t| coder.encode(t)).collect();
    let v = coder.vocab_size();
    let mut trainer = Trainer::new(&seqs, TrainConfig::default(), v).unwrap();
    trainer.advance(u64::MAX).unwrap();
    let rows = trainer.losses().unwrap();
    let heldout = rows
        .iter()
        .find(|r| r.split == claimforge::lm::Split::Heldout)
        .ok_or("no held-out row")?
        .cross_entropy;
    let limit = 0.7 * f64::from(v).ln();
    check!(heldout <= limit, "held-out {heldout:.4} > {limit:.4}");
    Ok(format!("held-out {heldout:.4} nats <= 0.7 ln {v} = {limit:.4}"))
}

fn c10_determinism(p: &Pipeline) -> Outcome {
    let d = &p.path;
    for out in ["s1.txt", "s2.txt"] {
        run(d, &["sample", "--checkpoint", "checkpoints/final.pcck", "--vocab", "vocab.txt", "--n", "30", "--seed", "42", "--out", out])?;
    }
    check!(fs::read(p.file("s1.txt")).unwrap() == fs::read(p.file("s2.txt")).unwrap(), "sample outputs differ");
    check!(fs::read(p.file("s1.json")).unwrap() == fs::read(p.file("s2.json")).unwrap(), "sidecars differ");
    let lines = fs::read_to_string(p.file("s1.txt")).unwrap().lines().count();
    check!(lines == 30, "{lines} generations");

    run(d, &["encode", "--in", "tagged.txt", "--vocab", "vocab.txt", "--out", "again.pcta"])?;
    check!(fs::read(p.file("claims.pcta")).unwrap() == fs::read(p.file("again.pcta")).unwrap(), "archives differ");

    for out in ["t1.csv", "t2.csv"] {
        let loss = format!("loss-{out}");
        run(d, &["adapt", "--archive", "claims.pcta", "--checkpoint-every", "60", "--samples-per-checkpoint", "20", "--out", out, "--loss-log", &loss])?;
    }
    check!(fs::read(p.file("t1.csv")).unwrap() == fs::read(p.file("t2.csv")).unwrap(), "tag-stats CSVs differ");
    check!(fs::read(p.file("loss-t1.csv")).unwrap() == fs::read(p.file("loss-t2.csv")).unwrap(), "loss CSVs differ");

    let archive = read_archive(p.file("claims.pcta")).unwrap();
    let probe = ProbeConfig { checkpoint_every: 60, samples_per_checkpoint: 10, tokens_per_sample: 64, max_steps: None };
    let sampler = ProbeConfig::default_sampler(3);
    let a = adaptation_run(&archive, &TrainConfig::default(), &sampler, &probe).unwrap();
    let b = adaptation_run(&archive, &TrainConfig::default(), &sampler, &probe).unwrap();
    check!(tag_stats_csv(&a.tag_rows) == tag_stats_csv(&b.tag_rows), "library adaptation CSVs differ");
    Ok("sample, encode and adapt outputs byte-identical across runs".into())
}

fn c11_formats(p: &Pipeline) -> Outcome {
    let dir = &p.path;
    let archive = read_archive(p.file("claims.pcta")).map_err(|e| e.to_string())?;
    write_archive(dir.join("copy.pcta"), &archive).unwrap();
    check!(fs::read(p.file("claims.pcta")).unwrap() == fs::read(dir.join("copy.pcta")).unwrap(), "archive rewrite differs");

    let ck = load_checkpoint(p.file("checkpoints/final.pcck")).map_err(|e| e.to_string())?;
    save_checkpoint(&ck.model, ck.step, ck.created_at, dir.join("copy.pcck")).unwrap();
    check!(
        fs::read(p.file("checkpoints/final.pcck")).unwrap() == fs::read(dir.join("copy.pcck")).unwrap(),
        "checkpoint rewrite differs"
    );

    let bytes = archive.to_bytes().unwrap();
    let mut magic = bytes.clone();
    magic[0] ^= 0xff;
    let mut crc = bytes.clone();
    *crc.last_mut().unwrap() ^= 0x01;
    check!(matches!(TokenArchive::from_bytes(&magic), Err(ArchiveError::BadMagic)), "archive magic");
    check!(matches!(TokenArchive::from_bytes(&crc), Err(ArchiveError::Checksum { .. })), "archive crc");
    check!(matches!(TokenArchive::from_bytes(&bytes[..bytes.len() - 9]), Err(ArchiveError::Truncated)), "archive truncation");

    let bytes = ck.to_bytes();
    let mut magic = bytes.clone();
    magic[0] ^= 0xff;
    let mut crc = bytes.clone();
    *crc.last_mut().unwrap() ^= 0x01;
    check!(matches!(Checkpoint::from_bytes(&magic), Err(CheckpointError::BadMagic)), "checkpoint magic");
    check!(matches!(Checkpoint::from_bytes(&crc), Err(CheckpointError::Checksum { .. })), "checkpoint crc");
    check!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 9]), Err(CheckpointError::Truncated)), "checkpoint truncation");
    Ok(format!("{} sequences and a step-{} checkpoint rewrite bit-exactly; 3 distinct error kinds each", archive.sequences.len(), ck.step))
}

fn c12_service(p: &Pipeline) -> Outcome {
    let ck = load_checkpoint(p.file("checkpoints/final.pcck")).unwrap();
    let coder = SubwordModel::load(p.file("vocab.txt")).unwrap();
    let state = Arc::new(AppState::new(Some(Snapshot { model: ck.model, coder: coder.clone(), step: ck.step }), 1024));
    let call = |body: String| {
        let state = state.clone();
        async move {
            let req = Request::post("/v1/generate")
                .header("content-type", "application/json")
                .body(Body::from(body))
                .unwrap();
            let resp = router(state).oneshot(req).await.unwrap();
            let status = resp.status();
            let bytes = resp.into_body().collect().await.unwrap().to_bytes();
            (status, serde_json::from_slice::<serde_json::Value>(&bytes).unwrap())
        }
    };
    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(async {
        // 512 '~' then 188 '`': one token per character, so the kept part
        // is recognisable in the echoed prompt.
        let (head, tail) = ("~".repeat(512), "`".repeat(188));
        let prompt = format!("{head}{tail}");
        let ids = coder.encode(&prompt);
        check!(ids.len() == 700, "prompt is {} tokens", ids.len());
        let body = serde_json::json!({ "prompt": prompt, "max_tokens": 4, "seed": 1 }).to_string();
        let (status, resp) = call(body).await;
        check!(status == StatusCode::OK, "long prompt: {status}");
        check!(resp["effective_prompt_tokens"] == 512, "effective_prompt_tokens = {}", resp["effective_prompt_tokens"]);
        let raw = resp["samples"][0]["raw_text"].as_str().unwrap_or_default();
        check!(raw.starts_with(&head) && !raw.starts_with(&format!("{head}`")), "kept tokens are not the leading 512");

        let (status, resp) = call(r#"{"prompt": "", "num_samples": 2, "seed": 7}"#.into()).await;
        check!(status == StatusCode::OK, "empty prompt: {status}");
        check!(resp["effective_prompt_tokens"] == 0, "empty prompt used {} tokens", resp["effective_prompt_tokens"]);
        check!(resp["samples"].as_array().map(Vec::len) == Some(2), "sample count");

        let (status, resp) = call(r#"{"num_samples": 31}"#.into()).await;
        check!(status == StatusCode::BAD_REQUEST && resp["field"] == "num_samples", "num_samples=31 -> {status} {resp}");

        let req = r#"{"num_samples": 5, "seed": 123, "strategy": "dynamic_kp", "rho": 0.1}"#;
        let (_, a) = call(req.into()).await;
        let (_, b) = call(req.into()).await;
        check!(a["samples"] == b["samples"], "seeded responses differ");
        Ok("truncation to 512 leading tokens, unconditional path, 31 rejected, seeded repeats identical".into())
    })
}

fn main() {
    let pipeline = Pipeline::build();
    let with_pipeline = |f: fn(&Pipeline) -> Outcome| -> Criterion<'_> {
        let p = &pipeline;
        Box::new(move || match p {
            Ok(p) => f(p),
            Err(e) => Err(format!("pipeline setup failed: {e}")),
        })
    };
    let criteria: Vec<(&str, Criterion)> = vec![
        ("segmentation losslessness", Box::new(c1_losslessness)),
        ("tag round trip", Box::new(c2_tag_round_trip)),
        ("early-generation golden", Box::new(c3_golden)),
        ("dynamic_kp oracle equality", Box::new(c4_dynamic_kp_oracle)),
        ("filter properties", Box::new(c5_filter_properties)),
        ("worked numeric cases", Box::new(c6_worked_cases)),
        ("n-gram correctness", Box::new(c7_ngram)),
        ("tag adaptation", Box::new(c8_adaptation)),
        ("loss curve", Box::new(c9_loss_curve)),
        ("determinism", with_pipeline(c10_determinism)),
        ("formats", with_pipeline(c11_formats)),
        ("service", with_pipeline(c12_service)),
    ];

    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {reason}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
