//! Plain-text `key = value` configuration files.
//!
//! One pair per line; `#` starts a comment; keys may use `-` or `_`
//! interchangeably and are stored with `_`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

pub fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl KeyValues {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: format!("expected `key = value`, found `{line}`"),
                });
            };
            let key = normalize_key(k);
            if key.is_empty() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: "empty key".into(),
                });
            }
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: format!("key `{key}` set twice"),
                });
            }
        }
        Ok(KeyValues { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(normalize_key(key), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Parses `key` if present.
    pub fn parsed<T: FromStr>(&self, key: &'static str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::param(key, format!("cannot parse `{v}`: {e}"))),
        }
    }

    /// Overwrites `target` if `key` is present.
    pub fn apply<T: FromStr>(&self, key: &'static str, target: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.parsed(key)? {
            *target = v;
        }
        Ok(())
    }

    /// Fails on the first key outside `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(Error::InvalidParameter {
                name: "config",
                reason: format!("unknown key `{k}`"),
            }),
            None => Ok(()),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn into_map(self) -> BTreeMap<String, String> {
        self.entries
    }
}
