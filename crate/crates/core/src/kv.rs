//! Flat `key = value` text files. `#` starts a comment; blank lines are ignored.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed key/value pairs that remember which keys were read, so leftovers can be rejected.
#[derive(Clone, Debug, Default)]
pub struct KvFile {
    values: BTreeMap<String, (usize, String)>,
    used: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{line}'", i + 1)))?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            if values.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", i + 1)));
            }
        }
        Ok(Self {
            values,
            used: Default::default(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.used.borrow_mut().insert(key.to_string());
        match self.values.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("line {line}: cannot parse value '{v}' for key '{key}'"))),
        }
    }

    /// Comma-separated pair, e.g. `0.5, 1.75`.
    pub fn get_pair<T: FromStr>(&self, key: &str) -> Result<Option<(T, T)>> {
        let Some(raw) = self.get::<String>(key)? else {
            return Ok(None);
        };
        let line = self.values[key].0;
        let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
        let parse = |s: &str| {
            s.parse::<T>()
                .map_err(|_| Error::Config(format!("line {line}: cannot parse '{s}' in key '{key}'")))
        };
        match parts.as_slice() {
            [a, b] => Ok(Some((parse(a)?, parse(b)?))),
            _ => Err(Error::Config(format!("line {line}: key '{key}' needs two comma-separated values"))),
        }
    }

    /// Errors if any key was never requested.
    pub fn reject_unknown(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<String> = self
            .values
            .iter()
            .filter(|(k, _)| !used.contains(*k))
            .map(|(k, (line, _))| format!("'{k}' (line {line})"))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))))
        }
    }
}
