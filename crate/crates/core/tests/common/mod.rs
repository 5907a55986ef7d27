#![allow(dead_code)]

use std::path::PathBuf;

use claimforge::{load_corpus, ClaimRecord};
use rand::Rng;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn mini_corpus() -> Vec<ClaimRecord> {
    let (records, stats) = load_corpus(repo_root().join("data/mini_corpus.csv"), None).unwrap();
    assert_eq!(stats.records_rejected, 0);
    records
}

/// The early-training generation quoted as evidence of tag adaptation.
pub fn early_generation() -> String {
    std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/early_generation.txt"))
        .unwrap()
        .trim_end_matches('\n')
        .to_owned()
}

/// Random text over an alphabet dense in split characters and spaces.
pub fn fuzz_text<R: Rng>(rng: &mut R, max_len: usize) -> String {
    const ALPHABET: &[char] = &[',', ';', ':', ' ', ' ', 'a', 'b', 'Z', '.', '\t', 'é', '—', '1', '@', '<', '|'];
    let len = rng.random_range(1..=max_len);
    (0..len).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())]).collect()
}
