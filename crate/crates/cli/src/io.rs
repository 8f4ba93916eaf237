//! CSV ingestion with optional whitening, and atomic table/JSON output.

use std::fs;
use std::path::{Path, PathBuf};

use ksd_bayes::Dataset;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Per-column affine transform `z = (x − mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Whitening {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Whitening {
    /// Column means and sample standard deviations.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(CliError::Data("whitening needs at least two rows".into()));
        }
        let d = rows[0].len();
        let mut mean = vec![0.0; d];
        let mut scale = vec![0.0; d];
        for j in 0..d {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let v = rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            if !(v > 0.0) {
                return Err(CliError::Data(format!("column {j} is constant")));
            }
            mean[j] = m;
            scale[j] = v.sqrt();
        }
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(z, (m, s))| m + s * z)
            .collect()
    }
}

/// Read a rectangular numeric CSV. A first row with no numeric cell is
/// taken as a header.
pub fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_rows(&text).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_rows(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    let mut width = None;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        if rows.is_empty() && width.is_none() && rec.iter().all(|c| c.parse::<f64>().is_err()) {
            width = Some(rec.len());
            continue;
        }
        let mut row = Vec::with_capacity(rec.len());
        for (col, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| CliError::Data(format!("row {}, column {}: not a number: {cell:?}", line + 1, col + 1)))?;
            if !v.is_finite() {
                return Err(CliError::Data(format!("row {}, column {}: non-finite value", line + 1, col + 1)));
            }
            row.push(v);
        }
        match width {
            Some(w) if w != row.len() => {
                return Err(CliError::Data(format!(
                    "row {} has {} columns, expected {w}",
                    line + 1,
                    row.len()
                )))
            }
            None => width = Some(row.len()),
            _ => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Data("no data rows".into()));
    }
    Ok(rows)
}

/// Load a dataset, whitening each column when asked.
pub fn load_csv(path: &Path, whiten: bool) -> Result<(Dataset, Option<Whitening>)> {
    let rows = read_rows(path)?;
    if whiten {
        let w = Whitening::fit(&rows)?;
        let z: Vec<Vec<f64>> = rows.iter().map(|r| w.apply(r)).collect();
        Ok((Dataset::from_rows(&z)?, Some(w)))
    } else {
        Ok((Dataset::from_rows(&rows)?, None))
    }
}

/// Shortest representation that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// A CSV table held as formatted cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn push_f64(&mut self, row: &[f64]) {
        self.push(row.iter().map(|v| fmt_f64(*v)).collect());
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// Write a table through a temporary file and a rename.
pub fn emit_table(table: &Table, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    w.write_record(&table.header).map_err(|e| CliError::Data(e.to_string()))?;
    for r in &table.rows {
        w.write_record(r).map_err(|e| CliError::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn emit_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn rows_table(rows: &[Vec<f64>]) -> Table {
    let d = rows.first().map_or(0, |r| r.len());
    let header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    let mut t = Table::new(&header);
    for r in rows {
        t.push_f64(r);
    }
    t
}
