//! Line-oriented `key = value` text format shared by grid files, checkpoints,
//! travelling-wave files, configs and manifests.
//!
//! A document is a header of `key = value` lines (order-free, `#` comments and
//! blank lines allowed) followed by an optional data block of consecutive
//! non-empty lines. Floats are written with 17 significant digits so that
//! write/read round-trips are bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Formats a float with 17 significant digits (exact f64 round-trip).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn parse_f64(path: &str, s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, format!("invalid float `{s}`")))?;
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("{path}: `{s}`")));
    }
    Ok(v)
}

pub fn parse_usize(path: &str, s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(path, format!("invalid integer `{s}`")))
}

/// Parsed header plus the trailing data lines.
pub struct Document {
    path: String,
    header: BTreeMap<String, String>,
    pub data: Vec<String>,
}

impl Document {
    /// Splits text into a `key = value` header and trailing data lines.
    /// The header ends at the first non-comment line that is not of
    /// `key = value` shape; everything after belongs to the data block.
    pub fn parse(path: &str, text: &str) -> Result<Document> {
        let mut header = BTreeMap::new();
        let mut data = Vec::new();
        let mut in_data = false;
        for line in text.lines() {
            let trimmed = line.trim();
            if !in_data {
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                if let Some((k, v)) = split_kv(trimmed) {
                    if header.insert(k.to_string(), v.to_string()).is_some() {
                        return Err(Error::parse(path, format!("duplicate key `{k}`")));
                    }
                    continue;
                }
                in_data = true;
            }
            if in_data && !trimmed.is_empty() {
                data.push(trimmed.to_string());
            }
        }
        Ok(Document {
            path: path.to_string(),
            header,
            data,
        })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.header.keys().map(|s| s.as_str())
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.header
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::parse(&self.path, format!("missing key `{key}`")))
    }

    pub fn get_opt(&self, key: &str) -> Option<&str> {
        self.header.get(key).map(|s| s.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        parse_f64(&self.path, self.get(key)?)
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        parse_usize(&self.path, self.get(key)?)
    }

    pub fn get_i64(&self, key: &str) -> Result<i64> {
        let s = self.get(key)?;
        s.trim()
            .parse()
            .map_err(|_| Error::parse(&self.path, format!("invalid integer `{s}`")))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        let s = self.get(key)?;
        s.trim()
            .parse()
            .map_err(|_| Error::parse(&self.path, format!("invalid integer `{s}`")))
    }

    /// Errors on header keys outside `allowed` (catches config typos).
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        for k in self.header.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::parse(&self.path, format!("unknown key `{k}`")));
            }
        }
        Ok(())
    }

    pub fn path(&self) -> &str {
        &self.path
    }
}

fn split_kv(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line.split_once('=')?;
    let k = k.trim();
    if k.is_empty() || k.contains(char::is_whitespace) {
        return None;
    }
    Some((k, v.trim()))
}

/// Incremental writer for the same format.
#[derive(Default)]
pub struct Writer {
    buf: String,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn comment(&mut self, text: &str) -> &mut Self {
        let _ = writeln!(self.buf, "# {text}");
        self
    }

    pub fn kv(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let _ = writeln!(self.buf, "{key} = {value}");
        self
    }

    pub fn kv_f64(&mut self, key: &str, value: f64) -> &mut Self {
        let _ = writeln!(self.buf, "{key} = {}", fmt_f64(value));
        self
    }

    /// Starts the data block (one blank separator line).
    pub fn blank(&mut self) -> &mut Self {
        self.buf.push('\n');
        self
    }

    pub fn line(&mut self, text: &str) -> &mut Self {
        let _ = writeln!(self.buf, "{text}");
        self
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

pub fn read_to_string(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_string(path: &std::path::Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}
