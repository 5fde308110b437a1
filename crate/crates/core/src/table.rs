//! Self-describing numeric CSV files.
//!
//! ```text
//! # geometry=par
//! # B0_mT=335.2
//! t_E_us,in_phase,quadrature
//! 0,1,0
//! ```
//!
//! Metadata lines start with `#` and hold `key=value`; `#` lines without `=`
//! are treated as comments. Numbers are written in Rust's shortest
//! round-trip form, so reading back a written table reproduces it exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self { meta: Vec::new(), columns: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    /// Adds or replaces a metadata entry.
    pub fn set_meta(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let value = value.to_string();
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn push_row(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}={v}");
        }
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses `text`; `path` is only used in error messages.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Data { path: path.to_path_buf(), line, message };
        let mut table = Table::default();
        let mut header = false;
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.split_once('=') {
                    table.meta.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            if !header {
                table.columns = line.split(',').map(|c| c.trim().to_string()).collect();
                if table.columns.iter().any(String::is_empty) {
                    return Err(err(line_no, "empty column name".into()));
                }
                header = true;
                continue;
            }
            let row = line
                .split(',')
                .map(|c| c.trim().parse::<f64>().map_err(|_| err(line_no, format!("cannot parse `{}` as a number", c.trim()))))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != table.columns.len() {
                return Err(err(line_no, format!("expected {} fields, found {}", table.columns.len(), row.len())));
            }
            table.rows.push(row);
        }
        if !header {
            return Err(err(0, "no column header".into()));
        }
        Ok(table)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text, path)
    }

    /// Writes to a temporary file next to `path` and renames it into place.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.render())
    }
}

pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let io = |source| Error::Io { path: path.to_path_buf(), source };
    let name = path.file_name().ok_or_else(|| Error::invalid("path", format!("`{}` has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, contents).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}
