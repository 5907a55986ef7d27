//! Adaptation probes and sample statistics.
//!
//! [`adaptation_run`] interleaves training with unconditional generation and
//! counts the special tags the model emits at each checkpoint. A model that
//! has picked up claim structure emits start, separator and end tags at
//! roughly the corpus rate; an untrained model emits them at `1/V`.

use std::collections::HashSet;

use rayon::prelude::*;
use thiserror::Error;

use crate::lm::{LmError, LossRow, NGramModel, TrainConfig, Trainer};
use crate::sampling::{generate, SamplerConfig, SamplingError, Strategy};
use crate::segmenter::ExtractedClaim;
use crate::tokenizer::{SpecialIds, SubwordModel, TokenArchive};

pub const TAG_STATS_CSV_HEADER: &str = "step,samples,tokens_per_sample,start_count,sep_count,end_count";
pub const QUALITY_CSV_HEADER: &str = "batch,claim_count,complete_count,mean_token_length,max_token_length,mean_span_count,max_span_count,exact_duplicate_span_count";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TagCounts {
    pub start: u64,
    pub sep: u64,
    pub end: u64,
}

/// Counts tag ids across all sequences.
pub fn count_special_tags<S: AsRef<[u32]>>(sequences: &[S], specials: SpecialIds) -> TagCounts {
    let mut counts = TagCounts::default();
    for seq in sequences {
        for &id in seq.as_ref() {
            if id == specials.start {
                counts.start += 1;
            } else if id == specials.sep {
                counts.sep += 1;
            } else if id == specials.end {
                counts.end += 1;
            }
        }
    }
    counts
}

/// One probe row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagStats {
    pub step: u64,
    pub samples: usize,
    pub tokens_per_sample: usize,
    pub counts: TagCounts,
    /// Samples with at least one end tag. Not part of the CSV.
    pub samples_with_end: usize,
}

pub fn tag_stats_csv(rows: &[TagStats]) -> String {
    let mut out = String::from(TAG_STATS_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.step, r.samples, r.tokens_per_sample, r.counts.start, r.counts.sep, r.counts.end
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    /// Training sequences between probes.
    pub checkpoint_every: u64,
    pub samples_per_checkpoint: usize,
    pub tokens_per_sample: usize,
    /// Stop training after this many sequences.
    pub max_steps: Option<u64>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            checkpoint_every: 10,
            samples_per_checkpoint: 100,
            tokens_per_sample: 256,
            max_steps: None,
        }
    }
}

impl ProbeConfig {
    /// Probe sampler: unconditional top_k 40 at temperature 1.
    pub fn default_sampler(seed: u64) -> SamplerConfig {
        SamplerConfig {
            strategy: Strategy::top_k(),
            temperature: 1.0,
            seed,
        }
    }
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("archive holds no sequences")]
    EmptyArchive,
    #[error("invalid probe config: {0}")]
    Probe(String),
    #[error(transparent)]
    Model(#[from] LmError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

#[derive(Debug, Clone)]
pub struct AdaptationReport {
    pub tag_rows: Vec<TagStats>,
    pub loss_rows: Vec<LossRow>,
    pub model: NGramModel,
}

/// Draws `samples` unconditional generations from a fixed snapshot. Sample
/// `i` uses seed `sampler.seed + i`; only generated tokens are returned
/// (the injected start tag is dropped).
pub fn probe_samples(
    model: &NGramModel,
    sampler: &SamplerConfig,
    samples: usize,
    tokens_per_sample: usize,
) -> Result<Vec<Vec<u32>>, SamplingError> {
    (0..samples)
        .into_par_iter()
        .map(|i| {
            let cfg = sampler.with_seed(sampler.seed.wrapping_add(i as u64));
            let mut out = generate(model, &cfg, &[], tokens_per_sample, None)?;
            out.remove(0);
            Ok(out)
        })
        .collect()
}

fn probe_row(
    model: &NGramModel,
    step: u64,
    sampler: &SamplerConfig,
    probe: &ProbeConfig,
    specials: SpecialIds,
) -> Result<TagStats, SamplingError> {
    let seqs = probe_samples(model, sampler, probe.samples_per_checkpoint, probe.tokens_per_sample)?;
    Ok(TagStats {
        step,
        samples: probe.samples_per_checkpoint,
        tokens_per_sample: probe.tokens_per_sample,
        counts: count_special_tags(&seqs, specials),
        samples_with_end: seqs.iter().filter(|s| s.contains(&specials.end)).count(),
    })
}

/// Alternates training phases with generation probes, from the untrained
/// model at step 0 to the end of the training split (or `max_steps`).
pub fn adaptation_run(
    archive: &TokenArchive,
    train: &TrainConfig,
    sampler: &SamplerConfig,
    probe: &ProbeConfig,
) -> Result<AdaptationReport, MetricsError> {
    if archive.sequences.is_empty() {
        return Err(MetricsError::EmptyArchive);
    }
    if probe.checkpoint_every == 0 {
        return Err(MetricsError::Probe("checkpoint_every must be at least 1".into()));
    }
    if probe.tokens_per_sample == 0 {
        return Err(MetricsError::Probe("tokens_per_sample must be at least 1".into()));
    }
    sampler.validate()?;

    let mut trainer = Trainer::new(&archive.sequences, train.clone(), archive.vocab_size)?;
    let last = probe.max_steps.map_or(trainer.total_steps(), |m| m.min(trainer.total_steps()));
    let specials = archive.special_ids;

    let mut tag_rows = vec![probe_row(trainer.model(), 0, sampler, probe, specials)?];
    let mut loss_rows = trainer.losses()?;
    while trainer.step() < last {
        let n = probe.checkpoint_every.min(last - trainer.step());
        trainer.advance(n)?;
        tag_rows.push(probe_row(trainer.model(), trainer.step(), sampler, probe, specials)?);
        loss_rows.extend(trainer.losses()?);
    }
    Ok(AdaptationReport {
        tag_rows,
        loss_rows,
        model: trainer.into_model(),
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleQuality {
    pub claim_count: usize,
    pub complete_count: usize,
    pub mean_token_length: f64,
    pub max_token_length: usize,
    pub mean_span_count: f64,
    pub max_span_count: usize,
    /// Spans repeating an earlier span of the same claim verbatim.
    pub exact_duplicate_span_count: usize,
}

/// Token lengths are measured with `coder` on each claim's joined text.
pub fn sample_quality(claims: &[ExtractedClaim], coder: &SubwordModel) -> SampleQuality {
    if claims.is_empty() {
        return SampleQuality::default();
    }
    let mut q = SampleQuality {
        claim_count: claims.len(),
        ..SampleQuality::default()
    };
    let mut token_total = 0usize;
    let mut span_total = 0usize;
    for c in claims {
        if c.complete {
            q.complete_count += 1;
        }
        let tokens = coder.encode(&c.text).len();
        token_total += tokens;
        q.max_token_length = q.max_token_length.max(tokens);
        span_total += c.spans.len();
        q.max_span_count = q.max_span_count.max(c.spans.len());

        let mut seen = HashSet::new();
        for s in &c.spans {
            if !seen.insert(s.trim()) {
                q.exact_duplicate_span_count += 1;
            }
        }
    }
    q.mean_token_length = token_total as f64 / claims.len() as f64;
    q.mean_span_count = span_total as f64 / claims.len() as f64;
    q
}

pub fn quality_csv(rows: &[(String, SampleQuality)]) -> String {
    let mut out = String::from(QUALITY_CSV_HEADER);
    out.push('\n');
    for (batch, q) in rows {
        out.push_str(&format!(
            "{},{},{},{:.3},{},{:.3},{},{}\n",
            csv_field(batch),
            q.claim_count,
            q.complete_count,
            q.mean_token_length,
            q.max_token_length,
            q.mean_span_count,
            q.max_span_count,
            q.exact_duplicate_span_count
        ));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting() {
        let specials = SpecialIds::new();
        let empty: [Vec<u32>; 0] = [];
        assert_eq!(count_special_tags(&empty, specials), TagCounts::default());
        let batch = vec![vec![0u32, 2]; 3];
        assert_eq!(
            count_special_tags(&batch, specials),
            TagCounts { start: 3, sep: 0, end: 3 }
        );
    }

    #[test]
    fn duplicate_spans() {
        let claim = ExtractedClaim {
            text: "a; b; a;".into(),
            spans: vec!["a;".into(), "b;".into(), "a;".into()],
            complete: true,
        };
        let q = sample_quality(&[claim], &SubwordModel::base());
        assert_eq!(q.exact_duplicate_span_count, 1);
        assert_eq!(q.claim_count, 1);
        assert_eq!(q.max_span_count, 3);
        assert_eq!(q.max_token_length, 8);
        assert_eq!(sample_quality(&[], &SubwordModel::base()), SampleQuality::default());
    }

    #[test]
    fn tag_csv_layout() {
        let row = TagStats {
            step: 10,
            samples: 100,
            tokens_per_sample: 256,
            counts: TagCounts { start: 1, sep: 2, end: 3 },
            samples_with_end: 1,
        };
        assert_eq!(
            tag_stats_csv(&[row]),
            "step,samples,tokens_per_sample,start_count,sep_count,end_count\n10,100,256,1,2,3\n"
        );
    }

    #[test]
    fn quality_csv_quotes_batch_names() {
        let out = quality_csv(&[("a,b".into(), SampleQuality::default())]);
        assert!(out.lines().nth(1).unwrap().starts_with("\"a,b\",0,0,"));
    }

    #[test]
    fn row_count_arithmetic() {
        let seqs: Vec<Vec<u32>> = (0..100).map(|i| vec![0, 3 + (i % 5), 2]).collect();
        let archive = TokenArchive::new(10, SpecialIds::new(), seqs);
        let train = TrainConfig { heldout_fraction: 0.0, ..TrainConfig::default() };
        let probe = ProbeConfig {
            checkpoint_every: 10,
            samples_per_checkpoint: 4,
            tokens_per_sample: 8,
            max_steps: None,
        };
        let report = adaptation_run(&archive, &train, &ProbeConfig::default_sampler(1), &probe).unwrap();
        let steps: Vec<u64> = report.tag_rows.iter().map(|r| r.step).collect();
        assert_eq!(steps, (0..=10).map(|i| i * 10).collect::<Vec<_>>());
    }
}
