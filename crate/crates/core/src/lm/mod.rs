//! Interpolated n-gram model over subword ids.
//!
//! `p(t | ctx) = Σ_k w_k · p_ML(t | last k−1 tokens) + w_0 / V` for
//! k = N..1. When an order's context has never been seen, its weight is
//! handed down to the next lower order, and ultimately to the uniform term,
//! so every distribution sums to one without renormalising.

mod checkpoint;
mod train;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::{LanguageModel, LogitVector};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{loss_csv, split_heldout, LossRow, Split, Trainer, LOSS_CSV_HEADER};

/// Interpolation weights for the default order-4 model: λ₄, λ₃, λ₂, λ₁, λ₀.
pub const DEFAULT_WEIGHTS: [f64; 5] = [0.5, 0.25, 0.13, 0.09, 0.03];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub order: usize,
    /// Highest order first; the last entry is the uniform weight.
    pub weights: Vec<f64>,
    /// Sequences between checkpoints.
    pub checkpoint_interval: u64,
    pub heldout_fraction: f64,
    pub seed: u64,
    /// Recorded for provenance only; nothing here is gradient-trained.
    pub learning_rate: f64,
    /// Recorded for provenance only.
    pub batch_size: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            order: 4,
            weights: DEFAULT_WEIGHTS.to_vec(),
            checkpoint_interval: 1000,
            heldout_fraction: 0.1,
            seed: 0,
            learning_rate: 1e-4,
            batch_size: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |msg: String| Err(LmError::Config(msg));
        if self.order == 0 {
            return bad("order must be at least 1".into());
        }
        if self.weights.len() != self.order + 1 {
            return bad(format!(
                "order {} needs {} weights, got {}",
                self.order,
                self.order + 1,
                self.weights.len()
            ));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("weights must be finite and non-negative".into());
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return bad(format!("weights sum to {sum}, expected 1"));
        }
        if self.uniform_weight() <= 0.0 {
            return bad("the uniform weight must be positive".into());
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return bad(format!("heldout_fraction {} outside [0, 1)", self.heldout_fraction));
        }
        if self.checkpoint_interval == 0 {
            return bad("checkpoint_interval must be at least 1".into());
        }
        Ok(())
    }

    pub fn uniform_weight(&self) -> f64 {
        *self.weights.last().unwrap_or(&0.0)
    }

    /// Weight of the order-`k` maximum-likelihood term (1 ≤ k ≤ order).
    fn weight(&self, k: usize) -> f64 {
        self.weights[self.order - k]
    }
}

#[derive(Debug, Error)]
pub enum LmError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("token id {id} at position {position} is outside the vocabulary of {vocab_size}")]
    UnknownToken { id: u32, position: usize, vocab_size: u32 },
    #[error("nothing to evaluate: no tokens in the given sequences")]
    EmptyEvaluation,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct ContextCounts {
    total: u64,
    next: HashMap<u32, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    config: TrainConfig,
    vocab_size: u32,
    /// `tables[j]` maps contexts of length `j` to their continuation counts.
    tables: Vec<HashMap<Vec<u32>, ContextCounts>>,
}

impl NGramModel {
    pub fn new(config: TrainConfig, vocab_size: u32) -> Result<Self, LmError> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(LmError::Config("vocabulary must not be empty".into()));
        }
        let tables = vec![HashMap::new(); config.order];
        Ok(Self {
            config,
            vocab_size,
            tables,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn order(&self) -> usize {
        self.config.order
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    fn check_ids(&self, sequence: &[u32]) -> Result<(), LmError> {
        match sequence.iter().position(|&id| id >= self.vocab_size) {
            Some(position) => Err(LmError::UnknownToken {
                id: sequence[position],
                position,
                vocab_size: self.vocab_size,
            }),
            None => Ok(()),
        }
    }

    /// Adds every k-gram of `sequence` (k = 1..=order) to the counts.
    pub fn update(&mut self, sequence: &[u32]) -> Result<(), LmError> {
        self.check_ids(sequence)?;
        for (i, &token) in sequence.iter().enumerate() {
            for ctx_len in 0..self.order().min(i + 1) {
                let ctx = &sequence[i - ctx_len..i];
                let table = &mut self.tables[ctx_len];
                let counts = match table.get_mut(ctx) {
                    Some(c) => c,
                    None => table.entry(ctx.to_vec()).or_default(),
                };
                counts.total += 1;
                *counts.next.entry(token).or_default() += 1;
            }
        }
        Ok(())
    }

    /// Count of `token` after exactly `context`, if that context was seen.
    pub fn count(&self, context: &[u32], token: u32) -> u64 {
        self.tables
            .get(context.len())
            .and_then(|t| t.get(context))
            .and_then(|c| c.next.get(&token))
            .copied()
            .unwrap_or(0)
    }

    /// Visits every order with evidence for `context`, highest first,
    /// passing the effective weight and the context's counts. Returns the
    /// weight left for the uniform term, or `None` if no order had evidence.
    fn mix<'a>(&'a self, context: &[u32], mut visit: impl FnMut(f64, &'a ContextCounts)) -> Option<f64> {
        let mut carry = 0.0;
        let mut used = 0.0;
        for k in (1..=self.order()).rev() {
            let w = self.config.weight(k) + carry;
            let ctx_len = k - 1;
            let seen = (context.len() >= ctx_len)
                .then(|| self.tables[ctx_len].get(&context[context.len() - ctx_len..]))
                .flatten()
                .filter(|c| c.total > 0);
            match seen {
                Some(counts) => {
                    visit(w, counts);
                    used += w;
                    carry = 0.0;
                }
                None => carry = w,
            }
        }
        (used > 0.0).then_some(1.0 - used)
    }

    /// Next-token distribution after `context` (only its last `order − 1`
    /// tokens matter).
    pub fn next_distribution(&self, context: &[u32]) -> Vec<f64> {
        let v = self.vocab_size as usize;
        let mut probs = vec![0.0; v];
        let uniform = self.mix(context, |w, counts| {
            let scale = w / counts.total as f64;
            for (&t, &c) in &counts.next {
                probs[t as usize] += scale * c as f64;
            }
        });
        let floor = uniform.unwrap_or(1.0) / self.vocab_size as f64;
        for p in &mut probs {
            *p += floor;
        }
        probs
    }

    /// `ln p(token | context)`, consistent with [`Self::next_distribution`].
    pub fn log_prob(&self, context: &[u32], token: u32) -> f64 {
        let mut p = 0.0;
        let uniform = self.mix(context, |w, counts| {
            if let Some(&c) = counts.next.get(&token) {
                p += w / counts.total as f64 * c as f64;
            }
        });
        match uniform {
            None => -(self.vocab_size as f64).ln(),
            Some(u) => (p + u / self.vocab_size as f64).ln(),
        }
    }

    /// Mean negative log-likelihood in nats per token. Each sequence's
    /// first token is scored against the empty context.
    pub fn cross_entropy<S: AsRef<[u32]>>(&self, sequences: &[S]) -> Result<f64, LmError> {
        // Shifted mean: exact when every event has the same loss.
        let mut shift = None;
        let mut acc = 0.0;
        let mut n = 0usize;
        for seq in sequences {
            let seq = seq.as_ref();
            self.check_ids(seq)?;
            for i in 0..seq.len() {
                let ctx_start = i.saturating_sub(self.order() - 1);
                let nll = -self.log_prob(&seq[ctx_start..i], seq[i]);
                let s = *shift.get_or_insert(nll);
                acc += nll - s;
                n += 1;
            }
        }
        match shift {
            Some(s) => Ok(s + acc / n as f64),
            None => Err(LmError::EmptyEvaluation),
        }
    }

    pub(crate) fn tables(&self) -> &[HashMap<Vec<u32>, ContextCounts>] {
        &self.tables
    }

    pub(crate) fn from_parts(
        config: TrainConfig,
        vocab_size: u32,
        tables: Vec<HashMap<Vec<u32>, ContextCounts>>,
    ) -> Result<Self, LmError> {
        let mut model = Self::new(config, vocab_size)?;
        if tables.len() != model.order() {
            return Err(LmError::Config("count tables do not match the model order".into()));
        }
        model.tables = tables;
        Ok(model)
    }
}

impl ContextCounts {
    pub(crate) fn next(&self) -> &HashMap<u32, u64> {
        &self.next
    }

    pub(crate) fn from_next(next: HashMap<u32, u64>) -> Self {
        Self {
            total: next.values().sum(),
            next,
        }
    }
}

impl LanguageModel for NGramModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size as usize
    }

    fn logits(&self, context: &[u32]) -> LogitVector {
        let probs = self.next_distribution(context);
        LogitVector::from_finite(probs.into_iter().map(f64::ln).collect())
    }
}
