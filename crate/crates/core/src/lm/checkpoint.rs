//! Checkpoint files.
//!
//! Little-endian layout:
//!
//! ```text
//! "PCCK"                      magic
//! u16                         version (1)
//! TrainConfig                 u32 order, u32 n, n * f64 weights,
//!                             u64 checkpoint_interval, f64 heldout_fraction,
//!                             u64 seed, f64 learning_rate, u32 batch_size
//! u32                         vocab_size
//! u64                         step (training sequences consumed)
//! u64                         created_at (unix seconds)
//! u32                         table count (= order)
//! per table j (contexts of length j), contexts in ascending order:
//!   u64 context count
//!   { j * u32 context, u32 m, m * (u32 token, u64 count) }*
//! u32                         CRC-32 (IEEE) of every byte after the magic
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{ContextCounts, LmError, NGramModel, TrainConfig};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PCCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub created_at: u64,
    pub model: NGramModel,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u16),
    #[error("checkpoint checksum mismatch: stored {stored:#010x}, computed {actual:#010x}")]
    Checksum { stored: u32, actual: u32 },
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint is malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] LmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let model = &self.model;
        let cfg = model.config();
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        put_u16(&mut out, CHECKPOINT_VERSION);

        put_u32(&mut out, cfg.order as u32);
        put_u32(&mut out, cfg.weights.len() as u32);
        for &w in &cfg.weights {
            put_f64(&mut out, w);
        }
        put_u64(&mut out, cfg.checkpoint_interval);
        put_f64(&mut out, cfg.heldout_fraction);
        put_u64(&mut out, cfg.seed);
        put_f64(&mut out, cfg.learning_rate);
        put_u32(&mut out, cfg.batch_size);

        put_u32(&mut out, model.vocab_size());
        put_u64(&mut out, self.step);
        put_u64(&mut out, self.created_at);

        put_u32(&mut out, model.tables().len() as u32);
        for table in model.tables() {
            let mut contexts: Vec<_> = table.iter().collect();
            contexts.sort_unstable_by(|a, b| a.0.cmp(b.0));
            put_u64(&mut out, contexts.len() as u64);
            for (ctx, counts) in contexts {
                for &id in ctx {
                    put_u32(&mut out, id);
                }
                let mut next: Vec<_> = counts.next().iter().collect();
                next.sort_unstable();
                put_u32(&mut out, next.len() as u32);
                for (&token, &count) in next {
                    put_u32(&mut out, token);
                    put_u64(&mut out, count);
                }
            }
        }
        let crc = crc32fast::hash(&out[CHECKPOINT_MAGIC.len()..]);
        put_u32(&mut out, crc);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut cur = Reader { bytes, at: 0 };
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = cur.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }

        let order = cur.u32()? as usize;
        let n_weights = cur.u32()? as usize;
        let mut weights = Vec::with_capacity(n_weights.min(64));
        for _ in 0..n_weights {
            weights.push(cur.f64()?);
        }
        let config = TrainConfig {
            order,
            weights,
            checkpoint_interval: cur.u64()?,
            heldout_fraction: cur.f64()?,
            seed: cur.u64()?,
            learning_rate: cur.f64()?,
            batch_size: cur.u32()?,
        };
        let vocab_size = cur.u32()?;
        let step = cur.u64()?;
        let created_at = cur.u64()?;

        let n_tables = cur.u32()? as usize;
        if n_tables != order {
            return Err(CheckpointError::Malformed(format!("{n_tables} tables for order {order}")));
        }
        let mut tables = Vec::with_capacity(n_tables);
        for ctx_len in 0..n_tables {
            let n_ctx = cur.u64()?;
            let mut table = HashMap::new();
            for _ in 0..n_ctx {
                let mut ctx = Vec::with_capacity(ctx_len);
                for _ in 0..ctx_len {
                    ctx.push(cur.u32()?);
                }
                let m = cur.u32()?;
                let mut next = HashMap::new();
                for _ in 0..m {
                    let token = cur.u32()?;
                    next.insert(token, cur.u64()?);
                }
                table.insert(ctx, ContextCounts::from_next(next));
            }
            tables.push(table);
        }
        let body_end = cur.at;
        let stored = cur.u32()?;
        if cur.at != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} unexpected bytes after the checksum",
                bytes.len() - cur.at
            )));
        }
        let actual = crc32fast::hash(&bytes[CHECKPOINT_MAGIC.len()..body_end]);
        if stored != actual {
            return Err(CheckpointError::Checksum { stored, actual });
        }

        for table in &tables {
            for (ctx, counts) in table.iter() {
                if ctx.iter().chain(counts.next().keys()).any(|&id| id >= vocab_size) {
                    return Err(CheckpointError::Malformed("token id outside the vocabulary".into()));
                }
            }
        }
        let model = NGramModel::from_parts(config, vocab_size, tables)?;
        Ok(Self { step, created_at, model })
    }
}

pub fn save_checkpoint(
    model: &NGramModel,
    step: u64,
    created_at: u64,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    let ck = Checkpoint {
        step,
        created_at,
        model: model.clone(),
    };
    fs::write(path, ck.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_bits().to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.at.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let out = self.bytes.get(self.at..end).ok_or(CheckpointError::Truncated)?;
        self.at = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_bits(self.u64()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_model() -> NGramModel {
        let config = TrainConfig {
            order: 2,
            weights: vec![0.8, 0.15, 0.05],
            ..TrainConfig::default()
        };
        let mut m = NGramModel::new(config, 2).unwrap();
        m.update(&[0, 1, 0, 1, 0, 1]).unwrap();
        m
    }

    #[test]
    fn untrained_round_trip() {
        let m = NGramModel::new(TrainConfig::default(), 50).unwrap();
        let ck = Checkpoint { step: 0, created_at: 0, model: m };
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert!(back.model.next_distribution(&[1, 2]).iter().all(|&p| p == 1.0 / 50.0));
    }

    #[test]
    fn hand_model_round_trip() {
        let ck = Checkpoint { step: 6, created_at: 1_700_000_000, model: hand_model() };
        let bytes = ck.to_bytes();
        assert_eq!(bytes, ck.to_bytes());
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.step, 6);
        assert_eq!(back.model.next_distribution(&[0]), ck.model.next_distribution(&[0]));
        assert!((back.model.next_distribution(&[0])[1] - 0.9).abs() < 1e-12);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn error_kinds() {
        let bytes = Checkpoint { step: 6, created_at: 0, model: hand_model() }.to_bytes();

        let mut magic = bytes.clone();
        magic[3] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&magic), Err(CheckpointError::BadMagic)));

        let mut version = bytes.clone();
        version[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&version), Err(CheckpointError::Version(9))));

        let mut flipped = bytes.clone();
        let n = flipped.len();
        flipped[n - 6] ^= 0x10;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(CheckpointError::Checksum { .. })));

        for cut in [3, 7, 40, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(CheckpointError::Truncated)), "cut {cut}");
        }
    }
}
