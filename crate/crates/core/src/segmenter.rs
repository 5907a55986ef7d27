//! Claim span segmentation and the tagged training representation.
//!
//! Granted claims exported from the patent database have their official line
//! breaks stripped, leaving punctuation glued directly to the next word
//! (`comprising:a processor;a memory`). A punctuation mark followed by a space
//! is ordinary punctuation; one followed by anything else marks a span
//! boundary.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::{END_TAG, SEP_TAG, START_TAG};

/// Characters after which a span boundary may occur.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSet(BTreeSet<char>);

impl SplitSet {
    pub fn new(chars: impl IntoIterator<Item = char>) -> Self {
        Self(chars.into_iter().collect())
    }

    /// Comma and semicolon only.
    pub fn strict() -> Self {
        Self::new([',', ';'])
    }

    pub fn contains(&self, c: char) -> bool {
        self.0.contains(&c)
    }

    pub fn chars(&self) -> impl Iterator<Item = char> + '_ {
        self.0.iter().copied()
    }
}

impl Default for SplitSet {
    fn default() -> Self {
        Self::new([',', ';', ':'])
    }
}

impl std::str::FromStr for SplitSet {
    type Err = SegmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err(SegmentError::EmptySplitSet);
        }
        Ok(Self::new(s.chars()))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SegmentError {
    #[error("claim text is empty")]
    Empty,
    #[error("claim text contains the span separator \"@@@\" at byte {0}")]
    SeparatorCollision(usize),
    #[error("claim text contains the reserved tag {tag} at byte {offset}")]
    TagCollision { tag: &'static str, offset: usize },
    #[error("split character set is empty")]
    EmptySplitSet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentedClaim {
    spans: Vec<String>,
    source_text: String,
}

impl SegmentedClaim {
    pub fn spans(&self) -> &[String] {
        &self.spans
    }

    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    pub fn into_spans(self) -> Vec<String> {
        self.spans
    }
}

/// A claim in its training form: `START span1 @@@ span2 ... spanN END`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedClaim(String);

impl TaggedClaim {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl std::fmt::Display for TaggedClaim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// A claim recovered from generated text.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ExtractedClaim {
    /// Spans joined by a single space.
    pub text: String,
    pub spans: Vec<String>,
    /// Whether the closing tag was found.
    pub complete: bool,
}

/// Replaces every line break (`\r\n`, `\n`, `\r`) with a single space so a
/// claim fits on one line of a training file.
pub fn normalize_newlines(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\r' => {
                if chars.peek() == Some(&'\n') {
                    chars.next();
                }
                out.push(' ');
            }
            '\n' => out.push(' '),
            c => out.push(c),
        }
    }
    out
}

/// Checks that `text` contains none of the three tag literals.
pub fn check_reserved(text: &str) -> Result<(), SegmentError> {
    if let Some(offset) = text.find(SEP_TAG) {
        return Err(SegmentError::SeparatorCollision(offset));
    }
    for tag in [START_TAG, END_TAG] {
        if let Some(offset) = text.find(tag) {
            return Err(SegmentError::TagCollision { tag, offset });
        }
    }
    Ok(())
}

/// Splits `text` immediately after every character in `split` that is
/// followed by a character other than a space.
pub fn segment_claim(text: &str, split: &SplitSet) -> Result<SegmentedClaim, SegmentError> {
    if text.is_empty() {
        return Err(SegmentError::Empty);
    }
    check_reserved(text)?;

    let mut spans = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((_, c)) = iter.next() {
        if !split.contains(c) {
            continue;
        }
        match iter.peek() {
            Some(&(next_at, next)) if next != ' ' => {
                spans.push(text[start..next_at].to_owned());
                start = next_at;
            }
            _ => {}
        }
    }
    spans.push(text[start..].to_owned());

    Ok(SegmentedClaim {
        spans,
        source_text: text.to_owned(),
    })
}

pub fn tag_claim(claim: &SegmentedClaim) -> TaggedClaim {
    let sep = format!(" {SEP_TAG} ");
    let body = claim.spans.join(&sep);
    let mut out = String::with_capacity(START_TAG.len() + body.len() + END_TAG.len());
    out.push_str(START_TAG);
    out.push_str(&body);
    out.push_str(END_TAG);
    TaggedClaim(out)
}

/// Finds every `START ... END` region in `generated` and splits it into spans.
///
/// A region ends at the first `END` after its `START`. If another `START`
/// appears first, or the text runs out, the claim is returned with
/// `complete = false`. Text outside the tags is ignored.
pub fn extract_claims(generated: &str) -> Vec<ExtractedClaim> {
    let mut claims = Vec::new();
    let mut rest = generated;
    while let Some(at) = rest.find(START_TAG) {
        let body_start = &rest[at + START_TAG.len()..];
        let end_at = body_start.find(END_TAG);
        let next_start = body_start.find(START_TAG);
        let (body, complete, advance) = match (end_at, next_start) {
            (Some(e), Some(s)) if s < e => (&body_start[..s], false, s),
            (Some(e), _) => (&body_start[..e], true, e + END_TAG.len()),
            (None, Some(s)) => (&body_start[..s], false, s),
            (None, None) => (body_start, false, body_start.len()),
        };
        claims.push(split_body(body, complete));
        rest = &body_start[advance..];
    }
    claims
}

fn split_body(body: &str, complete: bool) -> ExtractedClaim {
    let spans: Vec<String> = body
        .split(SEP_TAG)
        .map(|s| s.trim_matches(' '))
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect();
    ExtractedClaim {
        text: spans.join(" "),
        spans,
        complete,
    }
}
