use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{LmError, NGramModel, TrainConfig};

pub const LOSS_CSV_HEADER: &str = "step,split,cross_entropy_nats";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Heldout,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Heldout => "heldout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub split: Split,
    pub cross_entropy: f64,
}

pub fn loss_csv(rows: &[LossRow]) -> String {
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{:.9}\n", r.step, r.split.as_str(), r.cross_entropy));
    }
    out
}

/// Indices of the training and held-out sequences. The held-out set is a
/// seeded random subset of `round(n · fraction)` sequences; both lists keep
/// archive order.
pub fn split_heldout(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_heldout = ((n as f64) * fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let mut is_heldout = vec![false; n];
    for &i in &order[..n_heldout.min(n)] {
        is_heldout[i] = true;
    }
    (0..n).partition(|&i| !is_heldout[i])
}

/// Feeds training sequences to an [`NGramModel`] one at a time and reports
/// losses along the way. The step counter is the number of sequences seen.
pub struct Trainer<'a> {
    model: NGramModel,
    train: Vec<&'a [u32]>,
    heldout: Vec<&'a [u32]>,
    consumed: usize,
}

impl<'a> Trainer<'a> {
    pub fn new<S: AsRef<[u32]>>(sequences: &'a [S], config: TrainConfig, vocab_size: u32) -> Result<Self, LmError> {
        let model = NGramModel::new(config, vocab_size)?;
        let cfg = model.config();
        let (train, heldout) = split_heldout(sequences.len(), cfg.heldout_fraction, cfg.seed);
        Ok(Self {
            train: train.into_iter().map(|i| sequences[i].as_ref()).collect(),
            heldout: heldout.into_iter().map(|i| sequences[i].as_ref()).collect(),
            model,
            consumed: 0,
        })
    }

    pub fn step(&self) -> u64 {
        self.consumed as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.train.len() as u64
    }

    pub fn is_done(&self) -> bool {
        self.consumed == self.train.len()
    }

    pub fn model(&self) -> &NGramModel {
        &self.model
    }

    pub fn into_model(self) -> NGramModel {
        self.model
    }

    pub fn heldout(&self) -> &[&'a [u32]] {
        &self.heldout
    }

    /// Trains on up to `n` more sequences; returns how many were consumed.
    pub fn advance(&mut self, n: u64) -> Result<u64, LmError> {
        let end = (self.consumed + n as usize).min(self.train.len());
        for seq in &self.train[self.consumed..end] {
            self.model.update(seq)?;
        }
        let taken = end - self.consumed;
        self.consumed = end;
        Ok(taken as u64)
    }

    /// Loss rows at the current step: train loss over the sequences seen so
    /// far (omitted at step 0) and held-out loss (omitted when there is no
    /// held-out split).
    pub fn losses(&self) -> Result<Vec<LossRow>, LmError> {
        let mut rows = Vec::new();
        let step = self.step();
        if self.consumed > 0 {
            if let Ok(ce) = self.model.cross_entropy(&self.train[..self.consumed]) {
                rows.push(LossRow { step, split: Split::Train, cross_entropy: ce });
            }
        }
        if !self.heldout.is_empty() {
            match self.model.cross_entropy(&self.heldout) {
                Ok(ce) => rows.push(LossRow { step, split: Split::Heldout, cross_entropy: ce }),
                Err(LmError::EmptyEvaluation) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(rows)
    }
}
