//! Flat `key = value` text documents.
//!
//! Used for volume headers, config files, result sidecars and reports. Lines
//! are `key = value`; blank lines and lines starting with `#` are ignored.
//! Keys are unique and order-insensitive on read; writers emit insertion order.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDoc {
    entries: Vec<(String, String)>,
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = Self::new();
        let mut seen = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::CorruptHeader(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim().to_string();
            if k.is_empty() {
                return Err(Error::CorruptHeader(format!("line {}: empty key", n + 1)));
            }
            if seen.insert(k.clone(), ()).is_some() {
                return Err(Error::CorruptHeader(format!("duplicate key `{k}`")));
            }
            doc.entries.push((k, v.trim().to_string()));
        }
        Ok(doc)
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Display) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    /// Space-separated list value.
    pub fn push_list<T: Display>(&mut self, key: impl Into<String>, values: &[T]) -> &mut Self {
        let joined = values
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        self.entries.push((key.into(), joined));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Fails with the first key not in `allowed`.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        match self.keys().find(|k| !allowed.contains(k)) {
            Some(k) => Err(Error::UnknownKey(k.to_string())),
            None => Ok(()),
        }
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::CorruptHeader(format!("missing key `{key}`")))
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::CorruptHeader(format!("bad value for `{key}`: {v}")))
            })
            .transpose()
    }

    pub fn parse_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.get(key)
            .map(|v| {
                v.split_whitespace()
                    .map(|t| {
                        t.parse::<T>()
                            .map_err(|_| Error::CorruptHeader(format!("bad value for `{key}`: {v}")))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn parse_array<T: FromStr + Copy, const N: usize>(&self, key: &str) -> Result<Option<[T; N]>> {
        match self.parse_list::<T>(key)? {
            None => Ok(None),
            Some(v) if v.len() == N => Ok(Some(std::array::from_fn(|i| v[i]))),
            Some(v) => Err(Error::CorruptHeader(format!(
                "`{key}` expects {N} values, got {}",
                v.len()
            ))),
        }
    }
}

impl std::fmt::Display for KvDoc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_roundtrip_and_errors() {
        let mut d = KvDoc::new();
        d.push("a", 1.5).push_list("dims", &[2, 3, 4]);
        let back = KvDoc::parse(&d.to_string()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.parse_array::<usize, 3>("dims").unwrap(), Some([2, 3, 4]));
        assert!(KvDoc::parse("x = 1\nx = 2").is_err());
        assert!(KvDoc::parse("novalue").is_err());
        let err = KvDoc::parse("# c\nfoo = 1\nbar = 2")
            .unwrap()
            .reject_unknown(&["foo"])
            .unwrap_err();
        assert!(err.to_string().contains("bar"));
    }

    #[test]
    fn floats_survive_text() {
        let v = 0.1f64 + 0.2;
        let mut d = KvDoc::new();
        d.push("v", v);
        let back = KvDoc::parse(&d.to_string()).unwrap();
        assert_eq!(back.parse_value::<f64>("v").unwrap().unwrap().to_bits(), v.to_bits());
    }
}
