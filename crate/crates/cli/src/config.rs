//! Flat `key = value` config files.
//!
//! Keys are the long flag names (`vocab-size`, `heldout-fraction`, ...);
//! underscores are accepted in place of dashes. Blank lines and lines
//! starting with `#` are ignored. A flag given on the command line always
//! wins over the file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

pub const KNOWN_KEYS: &[&str] = &[
    "archive",
    "batch",
    "batch-size",
    "bind",
    "cap",
    "checkpoint",
    "checkpoint-every",
    "checkpoint-interval",
    "checkpoints",
    "context-window",
    "corpus",
    "created-at",
    "generations",
    "heldout-fraction",
    "k",
    "learning-rate",
    "limit",
    "loss-log",
    "max-steps",
    "max-tokens",
    "n",
    "order",
    "p",
    "prompt",
    "quality",
    "records",
    "rho",
    "samples-per-checkpoint",
    "seed",
    "split-punct",
    "strategy",
    "tag-stats",
    "tagged",
    "temperature",
    "tokens-per-sample",
    "vocab",
    "vocab-size",
    "weights",
];

#[derive(Debug, Default, Clone)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", i + 1))?;
            let key = key.trim().replace('_', "-");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                bail!("line {}: unknown key `{key}`", i + 1);
            }
            if values.insert(key.clone(), value.trim().to_owned()).is_some() {
                bail!("line {}: duplicate key `{key}`", i + 1);
            }
        }
        Ok(Self { values })
    }

    /// Flag value, else config value, else `None`.
    pub fn get<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        debug_assert!(KNOWN_KEYS.contains(&key), "{key}");
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("config key `{key}`: cannot parse {raw:?}: {e}")),
        }
    }

    pub fn or<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }

    pub fn require<T>(&self, flag: Option<T>, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(flag, key)?
            .ok_or_else(|| anyhow!("missing --{key} (pass the flag or set `{key}` in the config file)"))
    }
}

/// Comma-separated float list, as used for interpolation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatList(pub Vec<f64>);

impl FromStr for FloatList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
            .collect::<Result<_, _>>()
            .map(FloatList)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let cfg = Config::parse("# shared\nvocab_size = 512\n\nseed=3\n").unwrap();
        assert_eq!(cfg.or(None, "vocab-size", 2000u32).unwrap(), 512);
        assert_eq!(cfg.or(Some(9u64), "seed", 0).unwrap(), 9);
        assert_eq!(cfg.or(None, "n", 1usize).unwrap(), 1);
        assert!(cfg.require::<String>(None, "vocab").is_err());
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(Config::parse("vocab-sise = 1").is_err());
        assert!(Config::parse("seed 1").is_err());
        assert!(Config::parse("seed = 1\nseed = 2").is_err());
        let cfg = Config::parse("seed = x").unwrap();
        assert!(cfg.get::<u64>(None, "seed").is_err());
    }

    #[test]
    fn float_list() {
        assert_eq!("0.8, 0.15,0.05".parse::<FloatList>().unwrap().0, vec![0.8, 0.15, 0.05]);
        assert!("0.8,x".parse::<FloatList>().is_err());
    }
}
