//! Plain-text `key = value` files with `#` comments; keys may repeat.

use std::fs;
use std::path::Path;

use crate::error::{format_err, io_err, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvFile {
    pub entries: Vec<(String, String)>,
}

impl KvFile {
    pub fn push(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries.iter().filter(move |(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str, path: &Path) -> Result<&str> {
        self.get(key).ok_or_else(|| format_err(path, format!("missing key `{key}`")))
    }

    pub fn parse_required<T: std::str::FromStr>(&self, key: &str, path: &Path) -> Result<T> {
        let raw = self.require(key, path)?;
        raw.parse()
            .map_err(|_| format_err(path, format!("bad value `{raw}` for `{key}`")))
    }

    pub fn render(&self, header: &str) -> String {
        let mut s = format!("# {header}\n");
        for (k, v) in &self.entries {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format_err(path, format!("line {}: expected `key = value`", n + 1)))?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: &Path, header: &str) -> Result<()> {
        fs::write(path, self.render(header)).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, path)
    }
}

pub fn join_list<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_list<T: std::str::FromStr>(raw: &str, key: &str, path: &Path) -> Result<Vec<T>> {
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| format_err(path, format!("bad list item `{s}` in `{key}`")))
        })
        .collect()
}
