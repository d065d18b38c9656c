//! Flat `key = value` configuration files with `#` comments.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{io_err, usage, CliResult};

/// Parsed key-value pairs. Every lookup marks its key as used so that
/// [`KeyValues::finish`] can reject typos.
#[derive(Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl KeyValues {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("config line {}: expected `key = value`", lineno + 1)))?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(usage(format!("config line {}: empty key", lineno + 1)));
            }
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(usage(format!("config line {}: duplicate key `{key}`", lineno + 1)));
            }
        }
        Ok(Self { entries, used: RefCell::default() })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    /// Sets a key unless the file already has it.
    pub fn set_default(&mut self, key: &str, value: impl Display) {
        self.entries.entry(key.to_string()).or_insert_with(|| value.to_string());
    }

    /// Overrides a key, as the command-line flags do.
    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| usage(format!("config key `{key}`: cannot parse `{v}`"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> CliResult<T> {
        let v = self.raw(key).ok_or_else(|| usage(format!("config key `{key}` is required")))?;
        v.parse().map_err(|_| usage(format!("config key `{key}`: cannot parse `{v}`")))
    }

    /// Comma-separated list; an empty value is an empty list.
    pub fn list<T: FromStr>(&self, key: &str, default: Vec<T>) -> CliResult<Vec<T>> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => parse_list(v).map_err(|_| usage(format!("config key `{key}`: cannot parse list `{v}`"))),
        }
    }

    /// Rejects keys that no lookup asked for.
    pub fn finish(&self) -> CliResult<()> {
        let used = self.used.borrow();
        let unknown: Vec<&str> = self.entries.keys().filter(|k| !used.contains(*k)).map(String::as_str).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(usage(format!("unknown config keys: {}", unknown.join(", "))))
        }
    }
}

pub fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, T::Err> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect()
}

pub fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

/// Parses `true/false/yes/no/on/off/1/0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Flag(pub bool);

impl FromStr for Flag {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.to_ascii_lowercase().as_str() {
            "true" | "yes" | "on" | "1" => Ok(Flag(true)),
            "false" | "no" | "off" | "0" => Ok(Flag(false)),
            _ => Err(()),
        }
    }
}

/// Accumulates the effective settings of a command for its manifest, so that
/// the manifest doubles as a config file reproducing the run.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Echo {
    pub lines: Vec<(String, String)>,
}

impl Echo {
    pub fn put(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.lines.push((key.to_string(), value.to_string()));
        self
    }

    pub fn render(&self) -> String {
        self.lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_blank_lines_and_whitespace() {
        let kv = KeyValues::parse("# header\n\n  mu0 = 0.05  # molecular\nname=rnn4\n").unwrap();
        assert_eq!(kv.get("mu0", 0.0).unwrap(), 0.05);
        assert_eq!(kv.raw("name"), Some("rnn4"));
        assert_eq!(kv.get("absent", 7usize).unwrap(), 7);
        kv.finish().unwrap();
    }

    #[test]
    fn rejects_malformed_duplicate_and_unknown() {
        assert!(KeyValues::parse("novalue\n").is_err());
        assert!(KeyValues::parse("a = 1\na = 2\n").is_err());
        let kv = KeyValues::parse("a = 1\nb = x\n").unwrap();
        assert!(kv.get("b", 0usize).is_err());
        let kv = KeyValues::parse("typo = 1\n").unwrap();
        assert!(kv.finish().is_err());
    }

    #[test]
    fn lists_and_flags() {
        let kv = KeyValues::parse("runs = a, b ,c\nempty =\non = yes\n").unwrap();
        assert_eq!(kv.list::<String>("runs", vec![]).unwrap(), ["a", "b", "c"]);
        assert!(kv.list::<u32>("empty", vec![1]).unwrap().is_empty());
        assert_eq!(kv.get("on", Flag(false)).unwrap(), Flag(true));
    }
}
