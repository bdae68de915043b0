//! The `key=value` body format shared by the HTTP API and the CLI.
//!
//! A body is UTF-8 text, one `key=value` pair per line, split at the first
//! `=`. Blank lines are ignored and a trailing `\r` is dropped. Keys may
//! repeat only where an endpoint says so.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KvError {
    #[error("body is not UTF-8")]
    NotUtf8,
    #[error("line {0}: expected key=value")]
    Syntax(usize),
    #[error("missing {0}")]
    Missing(String),
    #[error("{0} given more than once")]
    Repeated(String),
    #[error("unknown key {0}")]
    Unknown(String),
    #[error("invalid {key}: {message}")]
    Invalid { key: String, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Body {
    pairs: Vec<(String, String)>,
}

impl Body {
    pub fn parse(bytes: &[u8]) -> Result<Self, KvError> {
        let text = std::str::from_utf8(bytes).map_err(|_| KvError::NotUtf8)?;
        let mut pairs = Vec::new();
        for (n, line) in text.split('\n').enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(KvError::Syntax(n + 1))?;
            if k.is_empty() || k.chars().any(char::is_whitespace) {
                return Err(KvError::Syntax(n + 1));
            }
            pairs.push((k.to_string(), v.to_string()));
        }
        Ok(Self { pairs })
    }

    pub fn from_pairs<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> Self {
        Self {
            pairs: pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }

    /// Fails on any key that is neither in `keys` nor starts with one of
    /// `prefixes`.
    pub fn allow(&self, keys: &[&str], prefixes: &[&str]) -> Result<(), KvError> {
        for (k, _) in &self.pairs {
            if !keys.contains(&k.as_str()) && !prefixes.iter().any(|p| k.starts_with(p)) {
                return Err(KvError::Unknown(k.clone()));
            }
        }
        Ok(())
    }

    pub fn opt(&self, key: &str) -> Result<Option<&str>, KvError> {
        let mut found = self.pairs.iter().filter(|(k, _)| k == key);
        let first = found.next().map(|(_, v)| v.as_str());
        if found.next().is_some() {
            return Err(KvError::Repeated(key.to_string()));
        }
        Ok(first)
    }

    pub fn one(&self, key: &str) -> Result<&str, KvError> {
        self.opt(key)?.ok_or_else(|| KvError::Missing(key.to_string()))
    }

    pub fn all(&self, key: &str) -> Vec<&str> {
        self.pairs
            .iter()
            .filter(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .collect()
    }

    /// `(suffix, value)` for every key starting with `prefix`, rejecting
    /// repeats.
    pub fn prefixed(&self, prefix: &str) -> Result<Vec<(String, String)>, KvError> {
        let mut out: Vec<(String, String)> = Vec::new();
        for (k, v) in &self.pairs {
            if let Some(rest) = k.strip_prefix(prefix) {
                if out.iter().any(|(seen, _)| seen == rest) {
                    return Err(KvError::Repeated(k.clone()));
                }
                out.push((rest.to_string(), v.clone()));
            }
        }
        Ok(out)
    }

    pub fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, KvError>
    where
        T::Err: std::fmt::Display,
    {
        self.opt(key)?
            .map(|v| {
                v.parse().map_err(|e: T::Err| KvError::Invalid {
                    key: key.to_string(),
                    message: e.to_string(),
                })
            })
            .transpose()
    }
}

/// Builds a response body line by line.
#[derive(Debug, Default)]
pub struct Out {
    text: String,
}

impl Out {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pair(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let _ = writeln!(self.text, "{key}={value}");
        self
    }

    pub fn pair_opt(&mut self, key: &str, value: Option<impl std::fmt::Display>) -> &mut Self {
        if let Some(v) = value {
            self.pair(key, v);
        }
        self
    }

    /// One record as space-separated pairs on a single line. Values must not
    /// contain whitespace; the last field may.
    pub fn record(&mut self, fields: &[(&str, String)]) -> &mut Self {
        let line: Vec<String> = fields.iter().map(|(k, v)| format!("{k}={v}")).collect();
        self.text.push_str(&line.join(" "));
        self.text.push('\n');
        self
    }

    pub fn line(&mut self, line: &str) -> &mut Self {
        self.text.push_str(line);
        self.text.push('\n');
        self
    }

    pub fn finish(&mut self) -> String {
        std::mem::take(&mut self.text)
    }
}
