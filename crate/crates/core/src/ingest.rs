//! Loading first-claim records from a CSV export.
//!
//! The export has the header `cpc_ids,id,date,text`. `cpc_ids` holds the
//! comma-joined CPC subclasses of the patent inside one quoted field.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use thiserror::Error;

use crate::segmenter::{check_reserved, SegmentError};

pub const EXPECTED_HEADER: [&str; 4] = ["cpc_ids", "id", "date", "text"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClaimRecord {
    pub patent_id: String,
    pub grant_date: NaiveDate,
    pub cpc_ids: Vec<String>,
    pub claim_text: String,
}

/// Why a row was skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RejectReason {
    FieldCount,
    EmptyId,
    BadDate,
    BadCpc,
    EmptyText,
    SeparatorCollision,
    TagCollision,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::FieldCount => "field-count",
            RejectReason::EmptyId => "empty-id",
            RejectReason::BadDate => "bad-date",
            RejectReason::BadCpc => "bad-cpc",
            RejectReason::EmptyText => "empty-text",
            RejectReason::SeparatorCollision => "separator-collision",
            RejectReason::TagCollision => "tag-collision",
        }
    }
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub records_loaded: usize,
    pub records_rejected: usize,
    pub rejection_reasons: BTreeMap<RejectReason, usize>,
}

impl CorpusStats {
    pub fn rows_read(&self) -> usize {
        self.records_loaded + self.records_rejected
    }

    fn reject(&mut self, reason: RejectReason) {
        self.records_rejected += 1;
        *self.rejection_reasons.entry(reason).or_default() += 1;
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot open corpus {path}: {source}")]
    Open {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unexpected header {found:?}, expected cpc_ids,id,date,text")]
    Header { found: Vec<String> },
    #[error("corpus is empty (no header row)")]
    MissingHeader,
    #[error("invalid UTF-8 in row {row} (record starts at byte {record_byte}), field {field}")]
    Utf8 { row: u64, record_byte: u64, field: usize },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
}

/// Loads up to `limit` valid records from `path`, in file order.
pub fn load_corpus(
    path: impl AsRef<Path>,
    limit: Option<usize>,
) -> Result<(Vec<ClaimRecord>, CorpusStats), IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| IngestError::Open {
        path: path.to_owned(),
        source,
    })?;
    load_from_reader(file, limit)
}

pub fn load_from_reader<R: Read>(
    reader: R,
    limit: Option<usize>,
) -> Result<(Vec<ClaimRecord>, CorpusStats), IngestError> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);

    let mut raw = csv::ByteRecord::new();
    if !csv.read_byte_record(&mut raw)? {
        return Err(IngestError::MissingHeader);
    }
    let mut header = utf8_fields(&raw)?;
    if let Some(first) = header.first_mut() {
        if let Some(stripped) = first.strip_prefix('\u{feff}') {
            *first = stripped.to_owned();
        }
    }
    if header != EXPECTED_HEADER {
        return Err(IngestError::Header { found: header });
    }

    let mut records = Vec::new();
    let mut stats = CorpusStats::default();
    while limit.is_none_or(|n| records.len() < n) {
        if !csv.read_byte_record(&mut raw)? {
            break;
        }
        let fields = utf8_fields(&raw)?;
        match validate_row(fields) {
            Ok(record) => {
                stats.records_loaded += 1;
                records.push(record);
            }
            Err(reason) => stats.reject(reason),
        }
    }
    Ok((records, stats))
}

fn utf8_fields(raw: &csv::ByteRecord) -> Result<Vec<String>, IngestError> {
    let pos = raw.position().cloned().unwrap_or_else(csv::Position::new);
    let mut fields = Vec::with_capacity(raw.len());
    for (i, field) in raw.iter().enumerate() {
        match std::str::from_utf8(field) {
            Ok(s) => fields.push(s.to_owned()),
            Err(_) => {
                return Err(IngestError::Utf8 {
                    row: pos.line(),
                    record_byte: pos.byte(),
                    field: i,
                })
            }
        }
    }
    Ok(fields)
}

fn validate_row(fields: Vec<String>) -> Result<ClaimRecord, RejectReason> {
    let [cpc, id, date, text]: [String; 4] =
        fields.try_into().map_err(|_| RejectReason::FieldCount)?;

    let patent_id = id.trim();
    if patent_id.is_empty() {
        return Err(RejectReason::EmptyId);
    }
    let grant_date =
        NaiveDate::parse_from_str(date.trim(), "%Y-%m-%d").map_err(|_| RejectReason::BadDate)?;
    let cpc_ids = parse_cpc_list(&cpc).ok_or(RejectReason::BadCpc)?;
    let claim_text = text.trim();
    if claim_text.is_empty() {
        return Err(RejectReason::EmptyText);
    }
    match check_reserved(claim_text) {
        Ok(()) => {}
        Err(SegmentError::SeparatorCollision(_)) => return Err(RejectReason::SeparatorCollision),
        Err(_) => return Err(RejectReason::TagCollision),
    }

    Ok(ClaimRecord {
        patent_id: patent_id.to_owned(),
        grant_date,
        cpc_ids,
        claim_text: claim_text.to_owned(),
    })
}

/// Splits a comma-joined list of CPC subclasses; `None` if any code is malformed.
pub fn parse_cpc_list(cell: &str) -> Option<Vec<String>> {
    if cell.trim().is_empty() {
        return Some(Vec::new());
    }
    cell.split(',')
        .map(str::trim)
        .map(|code| is_cpc_subclass(code).then(|| code.to_owned()))
        .collect()
}

/// Section letter (A–H or Y), two-digit class, subclass letter: `A61B`, `G06F`.
pub fn is_cpc_subclass(code: &str) -> bool {
    let b = code.as_bytes();
    b.len() == 4
        && matches!(b[0], b'A'..=b'H' | b'Y')
        && b[1].is_ascii_digit()
        && b[2].is_ascii_digit()
        && b[3].is_ascii_uppercase()
}
