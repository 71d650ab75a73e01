//! Flat key-value run configuration.
//!
//! Configs are plain text: one `key = value` pair per line, `#` starts a
//! comment, blank lines are ignored. Keys are dotted paths such as
//! `scenario.dim` or `pilot.ratio.lambda`. Values are kept as trimmed
//! strings; typed accessors parse on demand and name the offending key in
//! their error. [`ConfigMap::emit`] writes keys in sorted order, and
//! `parse(emit(cfg))` reproduces `cfg` exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::{Error, Result};

/// An ordered map of dotted config keys to raw string values.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parse config text. Later occurrences of a key are rejected so a
    /// typo'd duplicate cannot silently win.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                key: format!("line {}", lineno + 1),
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config {
                    key: format!("line {}", lineno + 1),
                    reason: "empty key".to_string(),
                });
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(Error::Config {
                    key,
                    reason: "duplicate key".to_string(),
                });
            }
        }
        Ok(Self { entries })
    }

    /// Render as sorted `key = value` lines.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            writeln!(out, "{k} = {v}").expect("writing to String cannot fail");
        }
        out
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get_str(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config {
                key: key.to_string(),
                reason: "missing required key".to_string(),
            })
    }

    pub fn get_str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.entries.get(key).map(String::as_str).unwrap_or(default)
    }

    fn parse_with<T, F>(&self, key: &str, what: &str, f: F) -> Result<T>
    where
        F: FnOnce(&str) -> Option<T>,
    {
        let raw = self.get_str(key)?;
        f(raw).ok_or_else(|| Error::Config {
            key: key.to_string(),
            reason: format!("expected {what}, got `{raw}`"),
        })
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        self.parse_with(key, "a real number", |s| s.parse().ok())
    }

    pub fn get_f64_or(&self, key: &str, default: f64) -> Result<f64> {
        if self.contains(key) {
            self.get_f64(key)
        } else {
            Ok(default)
        }
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        self.parse_with(key, "a nonnegative integer", |s| s.parse().ok())
    }

    pub fn get_usize_or(&self, key: &str, default: usize) -> Result<usize> {
        if self.contains(key) {
            self.get_usize(key)
        } else {
            Ok(default)
        }
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        self.parse_with(key, "a nonnegative integer", |s| s.parse().ok())
    }

    pub fn get_u64_or(&self, key: &str, default: u64) -> Result<u64> {
        if self.contains(key) {
            self.get_u64(key)
        } else {
            Ok(default)
        }
    }

    pub fn get_bool_or(&self, key: &str, default: bool) -> Result<bool> {
        if !self.contains(key) {
            return Ok(default);
        }
        self.parse_with(key, "one of on/off/true/false", |s| match s {
            "on" | "true" | "yes" => Some(true),
            "off" | "false" | "no" => Some(false),
            _ => None,
        })
    }

    /// Comma-separated list of reals.
    pub fn get_f64_list(&self, key: &str) -> Result<Vec<f64>> {
        self.parse_with(key, "a comma-separated list of reals", |s| {
            s.split(',')
                .map(|p| p.trim().parse::<f64>().ok())
                .collect::<Option<Vec<f64>>>()
        })
    }

    /// Comma-separated list of nonnegative integers.
    pub fn get_usize_list(&self, key: &str) -> Result<Vec<usize>> {
        self.parse_with(key, "a comma-separated list of integers", |s| {
            s.split(',')
                .map(|p| p.trim().parse::<usize>().ok())
                .collect::<Option<Vec<usize>>>()
        })
    }
}
