//! Token archive: the binary container of encoded training sequences.
//!
//! Little-endian layout:
//!
//! ```text
//! "PCTA"            magic
//! u16               version (1)
//! u32               vocab_size
//! u32 u32 u32       start, sep, end ids
//! u64               sequence count
//! { u32 len, len * u32 ids }*
//! u32               CRC-32 (IEEE) of every byte after the magic
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::SpecialIds;

pub const ARCHIVE_MAGIC: [u8; 4] = *b"PCTA";
pub const ARCHIVE_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenArchive {
    pub version: u16,
    pub vocab_size: u32,
    pub special_ids: SpecialIds,
    pub sequences: Vec<Vec<u32>>,
}

impl TokenArchive {
    pub fn new(vocab_size: u32, special_ids: SpecialIds, sequences: Vec<Vec<u32>>) -> Self {
        Self {
            version: ARCHIVE_VERSION,
            vocab_size,
            special_ids,
            sequences,
        }
    }

    pub fn token_count(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    fn check_ids(&self) -> Result<(), ArchiveError> {
        let specials = [self.special_ids.start, self.special_ids.sep, self.special_ids.end];
        if let Some(&id) = specials.iter().find(|&&id| id >= self.vocab_size) {
            return Err(ArchiveError::IdOutOfRange { sequence: None, id, vocab_size: self.vocab_size });
        }
        for (i, seq) in self.sequences.iter().enumerate() {
            if let Some(&id) = seq.iter().find(|&&id| id >= self.vocab_size) {
                return Err(ArchiveError::IdOutOfRange { sequence: Some(i), id, vocab_size: self.vocab_size });
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ArchiveError> {
        if self.version != ARCHIVE_VERSION {
            return Err(ArchiveError::Version(self.version));
        }
        self.check_ids()?;
        let mut out = Vec::with_capacity(4 + 26 + self.token_count() * 4 + self.sequences.len() * 4 + 4);
        out.extend_from_slice(&ARCHIVE_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.vocab_size.to_le_bytes());
        for id in [self.special_ids.start, self.special_ids.sep, self.special_ids.end] {
            out.extend_from_slice(&id.to_le_bytes());
        }
        out.extend_from_slice(&(self.sequences.len() as u64).to_le_bytes());
        for seq in &self.sequences {
            let len = u32::try_from(seq.len()).map_err(|_| ArchiveError::SequenceTooLong(seq.len()))?;
            out.extend_from_slice(&len.to_le_bytes());
            for id in seq {
                out.extend_from_slice(&id.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out[ARCHIVE_MAGIC.len()..]);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArchiveError> {
        let mut cur = Cursor { bytes, at: 0 };
        if cur.take(4)? != ARCHIVE_MAGIC {
            return Err(ArchiveError::BadMagic);
        }
        let version = cur.u16()?;
        if version != ARCHIVE_VERSION {
            return Err(ArchiveError::Version(version));
        }
        let vocab_size = cur.u32()?;
        let special_ids = SpecialIds {
            start: cur.u32()?,
            sep: cur.u32()?,
            end: cur.u32()?,
        };
        let count = cur.u64()?;
        let mut sequences = Vec::with_capacity(count.min((bytes.len() / 4) as u64) as usize);
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let raw = cur.take(len.checked_mul(4).ok_or(ArchiveError::Truncated)?)?;
            sequences.push(
                raw.chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            );
        }
        let body_end = cur.at;
        let stored = cur.u32()?;
        if cur.at != bytes.len() {
            return Err(ArchiveError::TrailingBytes(bytes.len() - cur.at));
        }
        let actual = crc32fast::hash(&bytes[ARCHIVE_MAGIC.len()..body_end]);
        if stored != actual {
            return Err(ArchiveError::Checksum { stored, actual });
        }
        let archive = Self {
            version,
            vocab_size,
            special_ids,
            sequences,
        };
        archive.check_ids()?;
        Ok(archive)
    }
}

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("not a token archive (bad magic)")]
    BadMagic,
    #[error("unsupported archive version {0}")]
    Version(u16),
    #[error("checksum mismatch: stored {stored:#010x}, computed {actual:#010x}")]
    Checksum { stored: u32, actual: u32 },
    #[error("archive is truncated")]
    Truncated,
    #[error("{0} unexpected bytes after the checksum")]
    TrailingBytes(usize),
    #[error("token id {id} (sequence {sequence:?}) is outside the vocabulary of {vocab_size}")]
    IdOutOfRange {
        sequence: Option<usize>,
        id: u32,
        vocab_size: u32,
    },
    #[error("sequence of {0} tokens does not fit a u32 length")]
    SequenceTooLong(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ArchiveError> {
        let end = self.at.checked_add(n).ok_or(ArchiveError::Truncated)?;
        let out = self.bytes.get(self.at..end).ok_or(ArchiveError::Truncated)?;
        self.at = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, ArchiveError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ArchiveError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ArchiveError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn write_archive(path: impl AsRef<Path>, archive: &TokenArchive) -> Result<(), ArchiveError> {
    fs::write(path, archive.to_bytes()?)?;
    Ok(())
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<TokenArchive, ArchiveError> {
    TokenArchive::from_bytes(&fs::read(path)?)
}
