//! Flat key-value config files, used for transformer hyperparameters and
//! benchmark grid definitions.
//!
//! Format: one `key = value` per line, `#` starts a comment, lists are
//! comma-separated. Keys are case-sensitive; later assignments override
//! earlier ones.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlatConfig {
    entries: BTreeMap<String, String>,
}

impl FlatConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(line_no, format!("expected `key = value`: {raw}")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::parse(line_no, "empty key"));
            }
            entries.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.typed(key, "number")
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.typed(key, "integer")
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.typed(key, "integer")
    }

    fn typed<T: std::str::FromStr>(&self, key: &str, kind: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                Error::InvalidArgument(format!("config key `{key}`: `{v}` is not a {kind}"))
            }),
        }
    }

    /// Comma-separated list value; empty items are rejected.
    pub fn get_list(&self, key: &str) -> Result<Option<Vec<String>>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => {
                let items: Vec<String> = v.split(',').map(|s| s.trim().to_string()).collect();
                if items.iter().any(|s| s.is_empty()) {
                    return Err(Error::InvalidArgument(format!(
                        "config key `{key}`: empty list item in `{v}`"
                    )));
                }
                Ok(Some(items))
            }
        }
    }

    pub fn get_list_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.get_list(key)? {
            None => Ok(None),
            Some(items) => items
                .iter()
                .map(|s| {
                    s.parse::<T>().map_err(|_| {
                        Error::InvalidArgument(format!("config key `{key}`: bad item `{s}`"))
                    })
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_comments_and_lists() {
        let cfg = FlatConfig::parse(
            "# grid\nseq_lens = 64, 128\nseed = 42  # trailing comment\n\nname=medium\n",
        )
        .unwrap();
        assert_eq!(cfg.get_list_parsed::<usize>("seq_lens").unwrap().unwrap(), vec![64, 128]);
        assert_eq!(cfg.get_u64("seed").unwrap(), Some(42));
        assert_eq!(cfg.get("name"), Some("medium"));
        assert_eq!(cfg.get("missing"), None);
    }

    #[test]
    fn reports_line_numbers() {
        let err = FlatConfig::parse("a = 1\nbroken line\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn typed_errors_name_the_key() {
        let cfg = FlatConfig::parse("epochs = many").unwrap();
        let err = cfg.get_usize("epochs").unwrap_err();
        assert!(err.to_string().contains("epochs"));
    }
}
