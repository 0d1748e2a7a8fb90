//! CSV tables with a trailing `#` metadata block.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// An in-memory table written as CSV plus `# key=value` trailer lines.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub meta: Vec<(String, String)>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), ..Default::default() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let mut bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
        for (k, v) in &self.meta {
            bytes.extend_from_slice(format!("# {k}={v}\n").as_bytes());
        }
        Ok(bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        if text.trim().is_empty() {
            bail!("{} is empty", path.display());
        }
        // csv reads an unterminated trailing comment as a record.
        if !text.ends_with('\n') {
            text.push('\n');
        }
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let header = rdr.headers().with_context(|| format!("header of {}", path.display()))?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for r in rdr.records() {
            rows.push(r.with_context(|| format!("reading {}", path.display()))?.iter().map(String::from).collect());
        }
        let meta = text
            .lines()
            .filter_map(|l| l.strip_prefix("# "))
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Ok(Self { header, rows, meta })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Parsed numeric column; blank cells become `None`.
    pub fn column(&self, name: &str, file: &Path) -> Result<Vec<Option<f64>>> {
        let Some(c) = self.column_index(name) else {
            bail!("{} has no column `{name}`", file.display());
        };
        self.rows
            .iter()
            .map(|r| {
                let cell = r[c].trim();
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse().map(Some).with_context(|| format!("{}: bad number `{cell}` in `{name}`", file.display()))
                }
            })
            .collect()
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// Full-precision float formatting that round-trips.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
