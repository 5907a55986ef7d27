//! Template grammar for synthetic first claims.
//!
//! Generated claims mimic the database export: official line breaks are
//! gone, so span punctuation touches the next word while ordinary commas
//! keep their trailing space.
//!
//! ```text
//! claim      := apparatus | method
//! apparatus  := ART ADJ? DEVICE " for " PURPOSE ", the " DEVICE " comprising:"
//!               part (";" part){1,4} ";and " part "."
//! part       := ART COMPONENT " configured to " VERB " the " OBJECT
//!               ( ", wherein the " COMPONENT " is " RELATION
//!               | "," "the " COMPONENT " being " RELATION )?
//! method     := "A method for " PURPOSE ", the method comprising:"
//!               step (";" step){1,4} ";and " step "."
//! step       := GERUND " the " OBJECT ( " using the " COMPONENT )?
//! ```
//!
//! `ART` is "a"/"an" (capitalised at the start) by the next word's initial
//! vowel.
//!
//! Each record gets a sequential patent number, a Tuesday grant date in
//! 2013 and one to three CPC subclasses drawn from its device family.

use std::io::Write;

use chrono::{Days, NaiveDate};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::ingest::ClaimRecord;

/// Seed of the bundled mini-corpus.
pub const MINI_CORPUS_SEED: u64 = 2013;
/// Size of the bundled mini-corpus.
pub const MINI_CORPUS_SIZE: usize = 200;

const FIRST_PATENT: u64 = 8_341_762;

struct Family {
    devices: &'static [&'static str],
    cpc: &'static [&'static str],
}

const FAMILIES: &[Family] = &[
    Family {
        devices: &["mobile device", "wireless terminal", "communication apparatus"],
        cpc: &["H04W", "H04M", "H04B", "H04L"],
    },
    Family {
        devices: &["computing system", "data processing system", "server"],
        cpc: &["G06F", "G06N", "G06Q", "H04L"],
    },
    Family {
        devices: &["imaging device", "camera module", "display apparatus"],
        cpc: &["H04N", "G06T", "G02B", "G09G"],
    },
    Family {
        devices: &["medical instrument", "surgical system", "monitoring device"],
        cpc: &["A61B", "A61M", "A61N", "G16H"],
    },
    Family {
        devices: &["vehicle", "drive assembly", "battery module"],
        cpc: &["B60W", "B60L", "H01M", "F02D"],
    },
];

const ADJECTIVES: &[&str] = &["portable", "hand-held", "modular", "wearable", "compact"];

const PURPOSES: &[&str] = &[
    "processing image data",
    "transmitting wireless signals",
    "monitoring a patient",
    "controlling a motor",
    "storing user records",
    "detecting an object",
    "estimating a position",
    "managing battery power",
];

const COMPONENTS: &[&str] = &[
    "processor",
    "memory",
    "transceiver",
    "sensor",
    "controller",
    "display",
    "housing",
    "antenna",
    "camera",
    "interface circuit",
];

const VERBS: &[(&str, &str)] = &[
    ("receive", "receiving"),
    ("store", "storing"),
    ("transmit", "transmitting"),
    ("process", "processing"),
    ("detect", "detecting"),
    ("measure", "measuring"),
    ("generate", "generating"),
    ("filter", "filtering"),
];

const OBJECTS: &[&str] = &[
    "signal",
    "image",
    "data packet",
    "user input",
    "temperature value",
    "control command",
    "video stream",
    "position estimate",
];

const RELATIONS: &[&str] = &[
    "coupled to the housing",
    "disposed within the housing",
    "electrically connected to the processor",
    "in communication with the memory",
    "mounted on a substrate",
];

fn pick<'a, R: Rng>(rng: &mut R, items: &'a [&'a str]) -> &'a str {
    items.choose(rng).expect("non-empty word list")
}

fn article(next: &str) -> &'static str {
    if next.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

fn part<R: Rng>(rng: &mut R) -> String {
    let component = pick(rng, COMPONENTS);
    let mut s = format!(
        "{} {component} configured to {} the {}",
        article(component),
        VERBS.choose(rng).unwrap().0,
        pick(rng, OBJECTS)
    );
    match rng.random_range(0..4) {
        0 => s.push_str(&format!(", wherein the {} is {}", pick(rng, COMPONENTS), pick(rng, RELATIONS))),
        1 => s.push_str(&format!(",the {} being {}", pick(rng, COMPONENTS), pick(rng, RELATIONS))),
        _ => {}
    }
    s
}

fn step<R: Rng>(rng: &mut R) -> String {
    let mut s = format!("{} the {}", VERBS.choose(rng).unwrap().1, pick(rng, OBJECTS));
    if rng.random_bool(0.5) {
        s.push_str(&format!(" using the {}", pick(rng, COMPONENTS)));
    }
    s
}

fn claim<R: Rng>(rng: &mut R, family: &Family) -> String {
    let (mut text, body): (String, fn(&mut R) -> String) = if rng.random_bool(0.6) {
        let device = pick(rng, family.devices);
        let adjective = if rng.random_bool(0.3) {
            format!("{} ", pick(rng, ADJECTIVES))
        } else {
            String::new()
        };
        let article = if article(&format!("{adjective}{device}")) == "an" { "An" } else { "A" };
        (
            format!("{article} {adjective}{device} for {}, the {device} comprising:", pick(rng, PURPOSES)),
            part,
        )
    } else {
        (format!("A method for {}, the method comprising:", pick(rng, PURPOSES)), step)
    };
    let middle = rng.random_range(2..=5);
    for i in 0..middle {
        if i > 0 {
            text.push(';');
        }
        text.push_str(&body(rng));
    }
    text.push_str(";and ");
    text.push_str(&body(rng));
    text.push('.');
    text
}

/// Generates `n` synthetic records, deterministically for a given seed.
pub fn generate_corpus(n: usize, seed: u64) -> Vec<ClaimRecord> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let first_tuesday = NaiveDate::from_ymd_opt(2013, 1, 1).unwrap();
    (0..n)
        .map(|i| {
            let family = &FAMILIES[rng.random_range(0..FAMILIES.len())];
            let n_cpc = rng.random_range(1..=3);
            let mut cpc_ids: Vec<String> = family
                .cpc
                .choose_multiple(&mut rng, n_cpc)
                .map(|s| s.to_string())
                .collect();
            cpc_ids.sort();
            let week = (i * 52 / n.max(1)) as u64;
            ClaimRecord {
                patent_id: (FIRST_PATENT + i as u64).to_string(),
                grant_date: first_tuesday + Days::new(7 * week),
                cpc_ids,
                claim_text: claim(&mut rng, family),
            }
        })
        .collect()
}

/// Writes records in the ingest CSV layout.
pub fn write_corpus_csv<W: Write>(records: &[ClaimRecord], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(crate::ingest::EXPECTED_HEADER)?;
    for r in records {
        let date = r.grant_date.format("%Y-%m-%d").to_string();
        w.write_record([r.cpc_ids.join(","), r.patent_id.clone(), date, r.claim_text.clone()])?;
    }
    w.flush()?;
    Ok(())
}
