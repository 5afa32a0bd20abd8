//! Flat `key = value` configuration files with command-line overrides.

use crate::{CmdError, CmdResult};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Default)]
pub struct Config {
    map: BTreeMap<String, String>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> CmdResult<Self> {
        let mut cfg = Config::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CmdError::config(format!("cannot read config {}: {e}", path.display()))
            })?;
            for (idx, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    CmdError::config(format!(
                        "config line {}: expected `key = value`, got `{raw}`",
                        idx + 1
                    ))
                })?;
                cfg.map
                    .insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(cfg)
    }

    /// Command-line overrides win over file values.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn set_opt<T: ToString>(&mut self, key: &str, value: &Option<T>) {
        if let Some(v) = value {
            self.set(key, v.to_string());
        }
    }

    pub fn echo(&self) -> BTreeMap<String, String> {
        self.map.clone()
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, raw: &str) -> CmdResult<T> {
        raw.parse().map_err(|_| {
            CmdError::config(format!("field `{key}`: cannot parse value `{raw}`"))
        })
    }

    pub fn require<T: std::str::FromStr>(&self, key: &str) -> CmdResult<T> {
        match self.map.get(key) {
            Some(raw) => self.parse(key, raw),
            None => Err(CmdError::config(format!("missing required field `{key}`"))),
        }
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> CmdResult<T> {
        match self.map.get(key) {
            Some(raw) => self.parse(key, raw),
            None => Ok(default),
        }
    }

    pub fn get_str(&self, key: &str, default: &str) -> String {
        self.map
            .get(key)
            .cloned()
            .unwrap_or_else(|| default.to_string())
    }

    pub fn get_opt_str(&self, key: &str) -> Option<String> {
        self.map.get(key).cloned()
    }

    /// Parse a `m1xn1,m2xn2,...` grid list.
    pub fn get_grid(&self, key: &str, default: &[(usize, usize)]) -> CmdResult<Vec<(usize, usize)>> {
        match self.map.get(key) {
            None => Ok(default.to_vec()),
            Some(raw) => raw
                .split(',')
                .map(|cell| {
                    let (m, n) = cell.trim().split_once('x').ok_or_else(|| {
                        CmdError::config(format!("field `{key}`: expected `MxN`, got `{cell}`"))
                    })?;
                    Ok((self.parse(key, m.trim())?, self.parse(key, n.trim())?))
                })
                .collect(),
        }
    }

    /// Parse a comma-separated integer list.
    pub fn get_list(&self, key: &str, default: &[usize]) -> CmdResult<Vec<usize>> {
        match self.map.get(key) {
            None => Ok(default.to_vec()),
            Some(raw) => raw
                .split(',')
                .map(|tok| self.parse(key, tok.trim()))
                .collect(),
        }
    }
}
