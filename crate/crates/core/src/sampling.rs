//! Decoding: temperature, three cut-off filters, seeded draws and the
//! generation loop.
//!
//! Every filter returns the same [`FilteredLogits`] shape: the set of kept
//! ids plus a logit vector where excluded ids are `-inf` and so carry zero
//! probability. All orderings break ties by the lower token id.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::SpecialIds;

/// Identifier of the generator behind [`SamplerRng`], recorded in run metadata.
pub const RNG_ALGORITHM: &str = "chacha20";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("logit vector is empty")]
    EmptyLogits,
    #[error("logit {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("invalid sampler config: {0}")]
    Config(String),
    #[error("prompt token {id} at position {position} is outside the vocabulary of {vocab_size}")]
    PromptToken { id: u32, position: usize, vocab_size: usize },
    #[error("max_tokens must be at least 1")]
    ZeroMaxTokens,
}

/// Finite, non-empty logits indexed by token id.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self, SamplingError> {
        if values.is_empty() {
            return Err(SamplingError::EmptyLogits);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(SamplingError::NonFinite { index, value });
        }
        Ok(Self(values))
    }

    /// For sources that guarantee finiteness (log of a strictly positive
    /// distribution).
    pub(crate) fn from_finite(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty() && values.iter().all(|v| v.is_finite()));
        Self(values)
    }

    /// `ln p` of a strictly positive probability vector.
    pub fn from_probs(probs: &[f64]) -> Result<Self, SamplingError> {
        Self::new(probs.iter().map(|p| p.ln()).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn softmax(&self) -> Vec<f64> {
        softmax(&self.0)
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax; `-inf` entries map to exactly zero.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Descending by value, ascending by id on ties.
fn rank_desc(values: &[f64], a: usize, b: usize) -> Ordering {
    values[b].partial_cmp(&values[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
}

/// The `k` highest-ranked ids, in rank order.
fn top_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, |&a, &b| rank_desc(values, a, b));
        idx.truncate(k);
    }
    idx.sort_unstable_by(|&a, &b| rank_desc(values, a, b));
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredLogits {
    kept: Vec<u32>,
    values: Vec<f64>,
}

impl FilteredLogits {
    fn keep(logits: &LogitVector, mut ids: Vec<usize>) -> Self {
        ids.sort_unstable();
        let mut values = vec![f64::NEG_INFINITY; logits.len()];
        for &i in &ids {
            values[i] = logits.0[i];
        }
        Self {
            kept: ids.into_iter().map(|i| i as u32).collect(),
            values,
        }
    }

    fn keep_all(logits: &LogitVector) -> Self {
        Self {
            kept: (0..logits.len() as u32).collect(),
            values: logits.0.clone(),
        }
    }

    /// Kept ids in ascending order.
    pub fn kept(&self) -> &[u32] {
        &self.kept
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sampling distribution: softmax renormalised over the kept ids.
    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.values)
    }
}

pub fn apply_temperature(logits: &LogitVector, temperature: f64) -> Result<LogitVector, SamplingError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(SamplingError::Config(format!("temperature must be positive, got {temperature}")));
    }
    if temperature == 1.0 {
        return Ok(logits.clone());
    }
    LogitVector::new(logits.0.iter().map(|v| v / temperature).collect())
}

/// Keeps the `k` largest logits; everything when `k ≥ V`.
pub fn filter_top_k(logits: &LogitVector, k: usize) -> FilteredLogits {
    let k = k.max(1);
    if k >= logits.len() {
        return FilteredLogits::keep_all(logits);
    }
    FilteredLogits::keep(logits, top_indices(&logits.0, k))
}

/// Nucleus filter: the smallest probability-ordered prefix whose cumulative
/// mass reaches `p`. `p ≥ 1` keeps the whole support.
pub fn filter_top_p(logits: &LogitVector, p: f64) -> FilteredLogits {
    if p >= 1.0 {
        return FilteredLogits::keep_all(logits);
    }
    let probs = logits.softmax();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    // Logit order equals probability order, minus rounding ties after exp.
    order.sort_unstable_by(|&a, &b| rank_desc(&logits.0, a, b));
    let mut cumulative = 0.0;
    let mut n = 0;
    for &i in &order {
        cumulative += probs[i];
        n += 1;
        if cumulative >= p {
            break;
        }
    }
    order.truncate(n);
    FilteredLogits::keep(logits, order)
}

/// dynamic_kp: among the `cap` most probable tokens, count those whose
/// probability is at least `rho` times the top probability, then keep that
/// many tokens by logit rank.
pub fn filter_dynamic_kp(logits: &LogitVector, rho: f64, cap: usize) -> FilteredLogits {
    let probs = logits.softmax();
    let pool = top_indices(&probs, cap.max(1).min(probs.len()));
    let top = probs[pool[0]];
    let threshold = top * rho;
    let n = pool.iter().filter(|&&i| probs[i] >= threshold).count();
    filter_top_k(logits, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Strategy {
    TopK { k: usize },
    TopP { p: f64 },
    DynamicKp { rho: f64, cap: usize },
}

impl Strategy {
    pub const DEFAULT_K: usize = 40;
    pub const DEFAULT_P: f64 = 0.9;
    pub const DEFAULT_RHO: f64 = 0.1;
    pub const DEFAULT_CAP: usize = 100;

    pub fn top_k() -> Self {
        Strategy::TopK { k: Self::DEFAULT_K }
    }

    pub fn top_p() -> Self {
        Strategy::TopP { p: Self::DEFAULT_P }
    }

    pub fn dynamic_kp() -> Self {
        Strategy::DynamicKp {
            rho: Self::DEFAULT_RHO,
            cap: Self::DEFAULT_CAP,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::TopK { .. } => "top_k",
            Strategy::TopP { .. } => "top_p",
            Strategy::DynamicKp { .. } => "dynamic_kp",
        }
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        let err = |m: String| Err(SamplingError::Config(m));
        match *self {
            Strategy::TopK { k } if k < 1 => err(format!("k must be at least 1, got {k}")),
            Strategy::TopP { p } if !(p > 0.0 && p <= 1.0) => err(format!("p must be in (0, 1], got {p}")),
            Strategy::DynamicKp { rho, .. } if !(rho > 0.0 && rho <= 1.0) => {
                err(format!("rho must be in (0, 1], got {rho}"))
            }
            Strategy::DynamicKp { cap, .. } if cap < 1 => err(format!("cap must be at least 1, got {cap}")),
            _ => Ok(()),
        }
    }

    pub fn filter(&self, logits: &LogitVector) -> FilteredLogits {
        match *self {
            Strategy::TopK { k } => filter_top_k(logits, k),
            Strategy::TopP { p } => filter_top_p(logits, p),
            Strategy::DynamicKp { rho, cap } => filter_dynamic_kp(logits, rho, cap),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::dynamic_kp(),
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplingError> {
        self.strategy.validate()?;
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(SamplingError::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Seedable generator behind every draw ([`RNG_ALGORITHM`]).
#[derive(Debug, Clone)]
pub struct SamplerRng(ChaCha20Rng);

impl SamplerRng {
    pub fn seed_from(seed: u64) -> Self {
        Self(ChaCha20Rng::seed_from_u64(seed))
    }
}

/// Draws one id from the softmax over the kept ids.
pub fn sample_token(filtered: &FilteredLogits, rng: &mut SamplerRng) -> u32 {
    let kept = filtered.kept();
    let max = kept
        .iter()
        .map(|&i| filtered.values[i as usize])
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = kept.iter().map(|&i| (filtered.values[i as usize] - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let target = rng.0.random::<f64>() * total;
    let mut acc = 0.0;
    for (&id, w) in kept.iter().zip(&weights) {
        acc += w;
        if target < acc {
            return id;
        }
    }
    *kept.last().expect("filters keep at least one id")
}

/// Anything that can score the next token.
pub trait LanguageModel {
    fn vocab_size(&self) -> usize;
    fn logits(&self, context: &[u32]) -> LogitVector;
}

/// Generates up to `max_tokens` tokens after `prompt`.
///
/// An empty prompt selects unconditional mode: the start tag is injected as
/// the prompt. The output starts with the prompt; generation stops after
/// `stop_id` is emitted or `max_tokens` new tokens exist.
pub fn generate<M: LanguageModel + ?Sized>(
    model: &M,
    config: &SamplerConfig,
    prompt: &[u32],
    max_tokens: usize,
    stop_id: Option<u32>,
) -> Result<Vec<u32>, SamplingError> {
    config.validate()?;
    if max_tokens == 0 {
        return Err(SamplingError::ZeroMaxTokens);
    }
    let vocab_size = model.vocab_size();
    if let Some(position) = prompt.iter().position(|&id| id as usize >= vocab_size) {
        return Err(SamplingError::PromptToken {
            id: prompt[position],
            position,
            vocab_size,
        });
    }

    let mut out = if prompt.is_empty() {
        vec![SpecialIds::new().start]
    } else {
        prompt.to_vec()
    };
    out.reserve(max_tokens);
    let mut rng = SamplerRng::seed_from(config.seed);
    for _ in 0..max_tokens {
        let logits = apply_temperature(&model.logits(&out), config.temperature)?;
        let next = sample_token(&config.strategy.filter(&logits), &mut rng);
        out.push(next);
        if Some(next) == stop_id {
            break;
        }
    }
    Ok(out)
}
