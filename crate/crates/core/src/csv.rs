//! Minimal CSV emission and parsing for result tables.
//!
//! Tables carry `#`-prefixed `key=value` metadata lines, one header line and
//! comma-separated rows. Floats are written with 17 significant digits so
//! they round-trip exactly.

use std::io::{self, Write};

use crate::error::{Error, Result};

/// Format a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// A table ready to be written as CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            meta: Vec::new(),
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn push_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.meta.push((key.into(), value.to_string()));
    }

    pub fn push_row(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (k, v) in &self.meta {
            writeln!(w, "# {k}={v}")?;
        }
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("table content is UTF-8")
    }

    /// Parse text produced by [`Table::write_to`].
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = Table::default();
        let mut header_seen = false;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                let (k, v) = rest.split_once('=').unwrap_or((rest, ""));
                table.meta.push((k.to_string(), v.to_string()));
                continue;
            }
            let cells: Vec<String> = line.split(',').map(str::to_string).collect();
            if !header_seen {
                table.columns = cells;
                header_seen = true;
            } else {
                if cells.len() != table.columns.len() {
                    return Err(Error::Mismatch(format!(
                        "line {}: expected {} cells, got {}",
                        lineno + 1,
                        table.columns.len(),
                        cells.len()
                    )));
                }
                table.rows.push(cells);
            }
        }
        if !header_seen {
            return Err(Error::Length("no header line".into()));
        }
        Ok(table)
    }

    /// Column values parsed as floats.
    pub fn column_f64(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Mismatch(format!("no column {name}")))?;
        self.rows
            .iter()
            .map(|r| {
                r[idx]
                    .parse::<f64>()
                    .map_err(|e| Error::Mismatch(format!("{name}: {e}")))
            })
            .collect()
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}
