//! Plain-text experiment manifests: one `key = value` pair per line, `#`
//! starts a comment line. Keys keep their insertion order.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces `key`.
    pub fn set(&mut self, key: &str, value: impl fmt::Display) -> &mut Self {
        let value = value.to_string();
        assert!(
            !key.contains('=') && !key.contains('\n') && !value.contains('\n'),
            "manifest keys and values must be single-line, keys without '='"
        );
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Parses the value of `key` as `T`; `Ok(None)` when absent.
    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse().map_err(|_| {
                    Error::InvalidArgument(format!("manifest key {key} has unparsable value {v:?}"))
                })
            })
            .transpose()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn parse_str(text: &str, origin: &Path) -> Result<Self> {
        let mut m = Manifest::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: i as u64 + 1,
                message: "expected `key = value`".into(),
            })?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text, path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
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
    fn round_trip_keeps_order() {
        let mut m = Manifest::new();
        m.set("n", 512).set("lambda", 0.1).set("metric", "nmse");
        m.set("n", 128);
        let text = m.to_string();
        assert_eq!(text, "n = 128\nlambda = 0.1\nmetric = nmse\n");
        let back = Manifest::parse_str(&format!("# header\n\n{text}"), Path::new("mem")).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.parse::<usize>("n").unwrap(), Some(128));
        assert_eq!(back.parse::<usize>("missing").unwrap(), None);
        assert!(back.parse::<usize>("metric").is_err());
    }

    #[test]
    fn rejects_lines_without_separator() {
        assert!(Manifest::parse_str("n 5\n", Path::new("mem")).is_err());
    }
}
