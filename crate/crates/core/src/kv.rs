//! Line-oriented `key = value` files.
//!
//! Blank lines and lines starting with `#` are skipped. Keys are unique;
//! consumers take the keys they know and call [`KvFile::finish`] so that
//! leftovers are reported as errors.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{FsarError, Result};

#[derive(Debug, Clone, Default)]
pub struct KvFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                FsarError::InvalidConfig(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(FsarError::InvalidConfig(format!("line {}: empty key", lineno + 1)));
            }
            if entries
                .insert(key.to_string(), (lineno + 1, value.trim().to_string()))
                .is_some()
            {
                return Err(FsarError::InvalidConfig(format!(
                    "line {}: duplicate key `{key}`",
                    lineno + 1
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn take_str(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(_, v)| v)
    }

    /// Removes and parses `key`, leaving `default` when absent.
    pub fn take<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(default),
            Some((line, v)) => v.parse().map_err(|e| {
                FsarError::InvalidConfig(format!("line {line}: bad value for `{key}`: {e}"))
            }),
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((k, (line, _))) => Err(FsarError::InvalidConfig(format!(
                "line {line}: unknown key `{k}`"
            ))),
        }
    }
}
