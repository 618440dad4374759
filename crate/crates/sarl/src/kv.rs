//! Flat `key=value` text, one pair per line. Blank lines and lines starting
//! with `#` are ignored.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    pairs: Vec<(String, String)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            let k = k.trim();
            if kv.get(k).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", n + 1)));
            }
            kv.pairs.push((k.to_string(), v.trim().to_string()));
        }
        Ok(kv)
    }

    /// Inserts or replaces, keeping the original position of an existing key.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.pairs.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.pairs.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|(k, _)| k.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Config(format!("missing key {key:?}")))
    }

    pub fn parse_as<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|_| Error::Config(format!("bad value {v:?} for {key:?}"))))
            .transpose()
    }

    pub fn require_as<T: FromStr>(&self, key: &str) -> Result<T> {
        self.parse_as(key)?.ok_or_else(|| Error::Config(format!("missing key {key:?}")))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.pairs {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

pub fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {v:?} for {key:?}"))),
    }
}
