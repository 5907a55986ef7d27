//! Corpus-to-generation toolkit for patent claims.
//!
//! The pipeline runs in stages: [`ingest`] loads first claims from a CSV
//! export, [`segmenter`] splits each claim into spans and wraps it in the
//! special tags, [`tokenizer`] trains a byte-level subword coder and packs
//! encoded claims into a token archive, [`lm`] fits an interpolated n-gram
//! model, and [`sampling`] draws new claims with top_k, top_p or dynamic_kp
//! cut-offs. [`metrics`] measures how quickly the model picks up claim
//! structure, and [`synth`] generates the template-grammar corpora used in
//! tests and demos.

pub mod ingest;
pub mod lm;
pub mod metrics;
pub mod sampling;
pub mod segmenter;
pub mod synth;
pub mod tokenizer;

pub use ingest::{load_corpus, ClaimRecord, CorpusStats, IngestError};
pub use lm::{NGramModel, TrainConfig};
pub use sampling::{generate, LanguageModel, SamplerConfig, Strategy};
pub use segmenter::{extract_claims, segment_claim, tag_claim, ExtractedClaim, SegmentedClaim, TaggedClaim};
pub use tokenizer::{SpecialIds, SubwordModel, TokenArchive};

/// Literal marking the beginning of a claim.
pub const START_TAG: &str = "<|startoftext|>";
/// Literal separating two claim spans.
pub const SEP_TAG: &str = "@@@";
/// Literal marking the end of a claim.
pub const END_TAG: &str = "<|endoftext|>";
