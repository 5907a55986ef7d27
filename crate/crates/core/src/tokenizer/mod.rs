//! Byte-level subword coder with atomic claim tags.
//!
//! Id layout: `0..3` are the start, separator and end tags, `3..259` are the
//! 256 single bytes, and every id from 259 up is the product of one merge, in
//! training order. Tags are matched before byte coding and never take part in
//! merges, so counting tags over ids is exact.

mod archive;

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::{END_TAG, SEP_TAG, START_TAG};

pub use archive::{read_archive, write_archive, ArchiveError, TokenArchive, ARCHIVE_MAGIC, ARCHIVE_VERSION};

/// Offset of byte `0x00` in the id space.
pub const BYTE_OFFSET: u32 = 3;
/// Vocabulary size with no merges: three tags plus 256 bytes.
pub const BASE_VOCAB: u32 = BYTE_OFFSET + 256;

const VOCAB_HEADER: &str = "pcta-vocab v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct SpecialIds {
    pub start: u32,
    pub sep: u32,
    pub end: u32,
}

impl SpecialIds {
    pub const fn new() -> Self {
        Self { start: 0, sep: 1, end: 2 }
    }

    pub fn contains(&self, id: u32) -> bool {
        id == self.start || id == self.sep || id == self.end
    }

    fn literal(&self, id: u32) -> Option<&'static str> {
        match id {
            x if x == self.start => Some(START_TAG),
            x if x == self.sep => Some(SEP_TAG),
            x if x == self.end => Some(END_TAG),
            _ => None,
        }
    }
}

impl Default for SpecialIds {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("target vocabulary {0} is below the base size {BASE_VOCAB}")]
    VocabTooSmall(u32),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("token id {id} at position {position} is outside the vocabulary of {vocab_size}")]
    UnknownId { id: u32, position: usize, vocab_size: u32 },
    #[error("vocab file line {line}: {message}")]
    VocabFormat { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Trained merge vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordModel {
    merges: Vec<(u32, u32)>,
    pieces: Vec<Vec<u8>>,
    ranks: HashMap<(u32, u32), u32>,
}

/// A run of input between tags: either an atomic tag or raw bytes.
enum Chunk<'a> {
    Tag(u32),
    Bytes(&'a [u8]),
}

fn chunks(text: &str) -> Vec<Chunk<'_>> {
    let specials = SpecialIds::new();
    let tags = [
        (START_TAG, specials.start),
        (SEP_TAG, specials.sep),
        (END_TAG, specials.end),
    ];
    let mut out = Vec::new();
    let mut rest = text;
    loop {
        let next = tags
            .iter()
            .filter_map(|&(lit, id)| rest.find(lit).map(|at| (at, lit, id)))
            .min_by_key(|&(at, _, _)| at);
        match next {
            Some((at, lit, id)) => {
                if at > 0 {
                    out.push(Chunk::Bytes(&rest.as_bytes()[..at]));
                }
                out.push(Chunk::Tag(id));
                rest = &rest[at + lit.len()..];
            }
            None => {
                if !rest.is_empty() {
                    out.push(Chunk::Bytes(rest.as_bytes()));
                }
                return out;
            }
        }
    }
}

fn byte_ids(bytes: &[u8]) -> Vec<u32> {
    bytes.iter().map(|&b| BYTE_OFFSET + u32::from(b)).collect()
}

fn add_pairs(word: &[u32], weight: i64, counts: &mut HashMap<(u32, u32), i64>, touched: &mut HashSet<(u32, u32)>) {
    for w in word.windows(2) {
        let pair = (w[0], w[1]);
        *counts.entry(pair).or_default() += weight;
        touched.insert(pair);
    }
}

/// Replaces every non-overlapping occurrence of `pair`, left to right.
fn merge_pair(word: &mut Vec<u32>, pair: (u32, u32), new_id: u32) -> bool {
    let mut changed = false;
    let mut read = 0;
    let mut write = 0;
    while read < word.len() {
        if read + 1 < word.len() && word[read] == pair.0 && word[read + 1] == pair.1 {
            word[write] = new_id;
            read += 2;
            changed = true;
        } else {
            word[write] = word[read];
            read += 1;
        }
        write += 1;
    }
    word.truncate(write);
    changed
}

impl SubwordModel {
    /// The model with no merges: tags plus raw bytes.
    pub fn base() -> Self {
        let specials = SpecialIds::new();
        let mut pieces: Vec<Vec<u8>> = (0..BYTE_OFFSET)
            .map(|id| specials.literal(id).unwrap().as_bytes().to_vec())
            .collect();
        pieces.extend((0..=255u8).map(|b| vec![b]));
        Self {
            merges: Vec::new(),
            pieces,
            ranks: HashMap::new(),
        }
    }

    /// Builds a model from a merge list, validating every pair.
    pub fn from_merges(merges: Vec<(u32, u32)>) -> Result<Self, TokenizerError> {
        let mut model = Self::base();
        for (i, pair) in merges.into_iter().enumerate() {
            model.push_merge(pair).map_err(|message| TokenizerError::VocabFormat {
                line: i + 2,
                message,
            })?;
        }
        Ok(model)
    }

    fn push_merge(&mut self, (left, right): (u32, u32)) -> Result<u32, String> {
        let size = self.vocab_size();
        for id in [left, right] {
            if id >= size {
                return Err(format!("id {id} not yet defined (vocabulary has {size})"));
            }
            if id < BYTE_OFFSET {
                return Err(format!("special id {id} cannot be merged"));
            }
        }
        if self.ranks.contains_key(&(left, right)) {
            return Err(format!("duplicate merge {left} {right}"));
        }
        let mut piece = self.pieces[left as usize].clone();
        piece.extend_from_slice(&self.pieces[right as usize]);
        self.pieces.push(piece);
        self.ranks.insert((left, right), self.merges.len() as u32);
        self.merges.push((left, right));
        Ok(size)
    }

    /// Greedy pair-merge training.
    ///
    /// Repeatedly merges the most frequent adjacent pair (ties go to the
    /// smaller `(left, right)`) until the vocabulary reaches `target_vocab`
    /// or no pair occurs at least twice.
    pub fn train<S: AsRef<str>>(corpus: &[S], target_vocab: u32) -> Result<Self, TokenizerError> {
        if target_vocab < BASE_VOCAB {
            return Err(TokenizerError::VocabTooSmall(target_vocab));
        }
        if corpus.is_empty() {
            return Err(TokenizerError::EmptyCorpus);
        }

        // Identical byte runs train as one weighted word.
        let mut index: HashMap<&[u8], usize> = HashMap::new();
        let mut words: Vec<Vec<u32>> = Vec::new();
        let mut weights: Vec<i64> = Vec::new();
        for text in corpus {
            for chunk in chunks(text.as_ref()) {
                if let Chunk::Bytes(bytes) = chunk {
                    let slot = *index.entry(bytes).or_insert_with(|| {
                        words.push(byte_ids(bytes));
                        weights.push(0);
                        words.len() - 1
                    });
                    weights[slot] += 1;
                }
            }
        }

        let mut counts: HashMap<(u32, u32), i64> = HashMap::new();
        let mut occurs: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
        let mut touched = HashSet::new();
        for (wi, word) in words.iter().enumerate() {
            add_pairs(word, weights[wi], &mut counts, &mut touched);
            for w in word.windows(2) {
                let list = occurs.entry((w[0], w[1])).or_default();
                if list.last() != Some(&wi) {
                    list.push(wi);
                }
            }
        }
        let mut heap: BinaryHeap<(i64, Reverse<(u32, u32)>)> =
            counts.iter().map(|(&pair, &c)| (c, Reverse(pair))).collect();

        let mut model = Self::base();
        while model.vocab_size() < target_vocab {
            let Some((count, Reverse(pair))) = heap.pop() else { break };
            if counts.get(&pair) != Some(&count) {
                continue;
            }
            if count < 2 {
                break;
            }
            let new_id = model.push_merge(pair).expect("trained pairs are valid");

            let mut list = occurs.remove(&pair).unwrap_or_default();
            list.sort_unstable();
            list.dedup();
            touched.clear();
            for wi in list {
                let weight = weights[wi];
                let word = &mut words[wi];
                let before = word.clone();
                if !merge_pair(word, pair, new_id) {
                    continue;
                }
                add_pairs(&before, -weight, &mut counts, &mut touched);
                add_pairs(word, weight, &mut counts, &mut touched);
                for w in word.windows(2) {
                    if w[0] == new_id || w[1] == new_id {
                        let list = occurs.entry((w[0], w[1])).or_default();
                        if list.last() != Some(&wi) {
                            list.push(wi);
                        }
                    }
                }
            }
            for p in touched.drain() {
                match counts.get(&p) {
                    Some(&c) if c > 0 => heap.push((c, Reverse(p))),
                    Some(_) => {
                        counts.remove(&p);
                    }
                    None => {}
                }
            }
        }
        Ok(model)
    }

    pub fn vocab_size(&self) -> u32 {
        self.pieces.len() as u32
    }

    pub fn special_ids(&self) -> SpecialIds {
        SpecialIds::new()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    /// Bytes rendered by `id`, if it is in the vocabulary.
    pub fn piece(&self, id: u32) -> Option<&[u8]> {
        self.pieces.get(id as usize).map(Vec::as_slice)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for chunk in chunks(text) {
            match chunk {
                Chunk::Tag(id) => out.push(id),
                Chunk::Bytes(bytes) => out.extend(self.encode_bytes(bytes)),
            }
        }
        out
    }

    fn encode_bytes(&self, bytes: &[u8]) -> Vec<u32> {
        let mut word = byte_ids(bytes);
        loop {
            let best = word
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])))
                .min()
                .copied();
            let Some(rank) = best else { return word };
            let pair = self.merges[rank as usize];
            merge_pair(&mut word, pair, BASE_VOCAB + rank);
        }
    }

    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>, TokenizerError> {
        let mut out = Vec::with_capacity(ids.len() * 2);
        for (position, &id) in ids.iter().enumerate() {
            let piece = self.piece(id).ok_or(TokenizerError::UnknownId {
                id,
                position,
                vocab_size: self.vocab_size(),
            })?;
            out.extend_from_slice(piece);
        }
        Ok(out)
    }

    /// Decodes to text; byte sequences that are not valid UTF-8 (possible
    /// in sampled output) are replaced with U+FFFD.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let bytes = self.decode_bytes(ids)?;
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }

    pub fn to_vocab_string(&self) -> String {
        let mut out = String::with_capacity(16 + self.merges.len() * 10);
        out.push_str(VOCAB_HEADER);
        out.push('\n');
        for (l, r) in &self.merges {
            out.push_str(&format!("{l} {r}\n"));
        }
        out
    }

    pub fn parse_vocab(text: &str) -> Result<Self, TokenizerError> {
        let mut lines = text.lines();
        if lines.next() != Some(VOCAB_HEADER) {
            return Err(TokenizerError::VocabFormat {
                line: 1,
                message: format!("expected header {VOCAB_HEADER:?}"),
            });
        }
        let mut merges = Vec::new();
        for (i, line) in lines.enumerate() {
            let bad = |message: String| TokenizerError::VocabFormat { line: i + 2, message };
            let mut parts = line.split(' ');
            let (Some(l), Some(r), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad(format!("expected two ids, found {line:?}")));
            };
            let l = l.parse().map_err(|e| bad(format!("{l:?}: {e}")))?;
            let r = r.parse().map_err(|e| bad(format!("{r:?}: {e}")))?;
            merges.push((l, r));
        }
        Self::from_merges(merges)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TokenizerError> {
        fs::write(path, self.to_vocab_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        Self::parse_vocab(&fs::read_to_string(path)?)
    }
}
