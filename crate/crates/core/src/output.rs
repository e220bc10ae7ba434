//! Result tables and their CSV/JSON serialization.
//!
//! CSV files hold a header and data rows only; floats carry 17 significant
//! digits so they reload bit for bit. The provenance of a CSV file goes to a
//! sidecar `<path>.meta.json`. A JSON output is one object with the
//! provenance, the column names and the rows.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::estimation::ReplicaFailure;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    UInt(u64),
    Float(f64),
    Text(String),
    Bool(bool),
    Empty,
}

impl Cell {
    fn to_csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::UInt(v) => v.to_string(),
            Cell::Float(v) => format_float(*v),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Cell::Int(v) => json!(v),
            Cell::UInt(v) => json!(v),
            Cell::Float(v) if v.is_finite() => json!(v),
            Cell::Float(_) | Cell::Empty => Value::Null,
            Cell::Text(s) => json!(s),
            Cell::Bool(b) => json!(b),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::UInt(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::UInt(v as u64)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::UInt(v as u64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

/// `{:.16e}`: 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::Usage(format!(
                "row has {} cells, table has {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        writer.write_record(&self.columns)?;
        for row in &self.rows {
            writer.write_record(row.iter().map(Cell::to_csv))?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        json!({
            "columns": self.columns,
            "rows": self.rows.iter().map(|r| r.iter().map(Cell::to_json).collect::<Vec<_>>()).collect::<Vec<_>>(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Usage(format!("unknown format {other:?}, expected csv or json"))),
        }
    }
}

/// Everything needed to reproduce an output file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub parameters: Value,
    pub master_seed: Option<u64>,
    pub replicas_requested: u64,
    pub replicas_failed: u64,
    pub failures: Vec<ReplicaFailure>,
    /// Estimates and other run-level results.
    pub summary: Value,
    pub notes: Vec<String>,
}

impl Provenance {
    pub fn new(command: impl Into<String>, parameters: Value) -> Self {
        Self {
            tool: "subcrit",
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            parameters,
            master_seed: None,
            replicas_requested: 0,
            replicas_failed: 0,
            failures: Vec::new(),
            summary: Value::Null,
            notes: Vec::new(),
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes `table` to `path` (stdout when `None`). CSV output to a file gets a
/// provenance sidecar; CSV on stdout carries the table only.
pub fn write_output(
    table: &Table,
    provenance: &Provenance,
    format: OutputFormat,
    path: Option<&Path>,
) -> Result<()> {
    match (format, path) {
        (OutputFormat::Csv, Some(path)) => {
            table.write_csv(BufWriter::new(File::create(path)?))?;
            let mut meta = BufWriter::new(File::create(sidecar_path(path))?);
            serde_json::to_writer_pretty(&mut meta, provenance)?;
            meta.write_all(b"\n")?;
            meta.flush()?;
        }
        (OutputFormat::Csv, None) => table.write_csv(std::io::stdout().lock())?,
        (OutputFormat::Json, path) => {
            let doc = json!({
                "provenance": provenance,
                "columns": table.columns,
                "rows": table.to_json()["rows"],
            });
            let mut out: Box<dyn Write> = match path {
                Some(p) => Box::new(BufWriter::new(File::create(p)?)),
                None => Box::new(std::io::stdout().lock()),
            };
            serde_json::to_writer_pretty(&mut out, &doc)?;
            out.write_all(b"\n")?;
            out.flush()?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_csv_text() {
        for v in [0.1, 1.0 / 3.0, 0.388_196_601_125_010_5, 1e-300, -2.5e17, f64::MIN_POSITIVE] {
            let s = format_float(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(format_float(f64::NAN), "NaN");
    }

    #[test]
    fn csv_has_header_and_rows_only() {
        let mut t = Table::new(["n", "value", "label"]);
        t.push(vec![1024u64.into(), 0.5.into(), "a,b".into()]).unwrap();
        t.push(vec![2048u64.into(), Cell::Empty, "c".into()]).unwrap();
        assert!(t.push(vec![1u64.into()]).is_err());
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "n,value,label\n1024,5.0000000000000000e-1,\"a,b\"\n2048,,c\n"
        );
        let empty = Table::new(["x"]);
        let mut buf = Vec::new();
        empty.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x\n");
    }

    #[test]
    fn json_rows_and_formats() {
        let mut t = Table::new(["a", "b"]);
        t.push(vec![Cell::Float(f64::NAN), true.into()]).unwrap();
        assert_eq!(t.to_json()["rows"][0][0], Value::Null);
        assert_eq!("json".parse::<OutputFormat>().unwrap(), OutputFormat::Json);
        assert!("xml".parse::<OutputFormat>().is_err());
        assert_eq!(sidecar_path(Path::new("out/x.csv")), PathBuf::from("out/x.csv.meta.json"));
    }
}
