//! Ordered key=value manifests.
//!
//! One `key=value` pair per line. Keys are `[A-Za-z0-9_.-]+`; values are
//! arbitrary single-line text. Blank lines and lines starting with `#` are
//! skipped on read. Write order is insertion order, so a manifest written
//! twice from the same state is byte-identical.

use std::collections::HashMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    order: Vec<String>,
    values: HashMap<String, String>,
}

fn key_ok(key: &str) -> bool {
    !key.is_empty()
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

impl Manifest {
    pub fn new() -> Self {
        Manifest::default()
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> &mut Self {
        let value = value.to_string();
        debug_assert!(key_ok(key), "bad manifest key {key:?}");
        debug_assert!(!value.contains('\n'), "manifest value with newline");
        if !self.values.contains_key(key) {
            self.order.push(key.to_string());
        }
        self.values.insert(key.to_string(), value);
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::data(format!("manifest: missing key '{}'", key)))
    }

    pub fn require_parsed<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse().map_err(|_| {
            Error::data(format!(
                "manifest: key '{}' has unparseable value '{}'",
                key, raw
            ))
        })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(|s| s.as_str())
    }

    pub fn to_string_lines(&self) -> String {
        let mut out = String::new();
        for key in &self.order {
            out.push_str(key);
            out.push('=');
            out.push_str(&self.values[key]);
            out.push('\n');
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_string_lines())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Manifest> {
        let mut m = Manifest::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::data(format!(
                    "manifest line {}: no '=' in '{}'",
                    lineno + 1,
                    line
                )));
            };
            if !key_ok(key) {
                return Err(Error::data(format!(
                    "manifest line {}: bad key '{}'",
                    lineno + 1,
                    key
                )));
            }
            if m.values.contains_key(key) {
                return Err(Error::data(format!(
                    "manifest line {}: duplicate key '{}'",
                    lineno + 1,
                    key
                )));
            }
            m.set(key, value);
        }
        Ok(m)
    }

    pub fn read_from(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path)?;
        Manifest::parse(&text).map_err(|e| match e {
            Error::Data(msg) => Error::data(format!("{}: {}", path.display(), msg)),
            other => other,
        })
    }
}
