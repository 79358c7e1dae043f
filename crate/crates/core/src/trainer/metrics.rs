use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::losses::Mode;

/// Column order of the adversarial-training log.
pub fn gan_columns(mode: Mode) -> Vec<&'static str> {
    let mut cols = vec!["step", "epoch", "lr", "d_loss", "w_gap", "gp"];
    if mode.uses_inspector() {
        cols.push("insp_real");
    }
    cols.extend(["g_loss", "g_adv", "cls_fake", "cyc"]);
    if mode.uses_inspector() {
        cols.extend(["insp_fake", "fm"]);
    }
    cols
}

pub fn classifier_columns() -> Vec<&'static str> {
    vec!["epoch", "lr", "loss", "train_acc", "val_acc"]
}

/// Receives one header and then rows of matching width.
pub trait MetricsSink {
    fn header(&mut self, columns: &[&str]) -> Result<()>;
    fn row(&mut self, values: &[f64]) -> Result<()>;
}

/// In-memory log; also the parsed form of a CSV log.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl MetricsLog {
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::invalid(format!("metrics log has no column {name:?}")))?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format_row(r));
            s.push('\n');
        }
        s
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let columns: Vec<String> = reader
            .headers()
            .map_err(|e| csv_err(path, e))?
            .iter()
            .map(String::from)
            .collect();
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let row = rec
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::format(path, format!("row {}: {e}", i + 1)))?;
            rows.push(row);
        }
        Ok(MetricsLog { columns, rows })
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

impl MetricsSink for MetricsLog {
    fn header(&mut self, columns: &[&str]) -> Result<()> {
        let cols: Vec<String> = columns.iter().map(|c| c.to_string()).collect();
        if !self.columns.is_empty() && self.columns != cols {
            return Err(Error::invalid(format!(
                "metrics columns changed from {:?} to {cols:?}",
                self.columns
            )));
        }
        self.columns = cols;
        Ok(())
    }

    fn row(&mut self, values: &[f64]) -> Result<()> {
        check_width(self.columns.len(), values)?;
        self.rows.push(values.to_vec());
        Ok(())
    }
}

fn check_width(cols: usize, values: &[f64]) -> Result<()> {
    if values.len() != cols {
        return Err(Error::shape(format!(
            "metrics row has {} values for {cols} columns",
            values.len()
        )));
    }
    Ok(())
}

// Shortest round-trip decimal, so logs compare bit-exactly as text.
fn format_row(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Append-only CSV file. Reopening an existing log checks that its header
/// matches and continues after the last row.
pub struct CsvMetrics {
    path: PathBuf,
    file: Option<File>,
    columns: usize,
}

impl CsvMetrics {
    pub fn new(path: &Path) -> Self {
        CsvMetrics {
            path: path.to_path_buf(),
            file: None,
            columns: 0,
        }
    }
}

/// Drops rows whose first column exceeds `max_first`, so a resumed run
/// does not repeat steps logged after its checkpoint. Missing files are
/// left alone.
pub fn trim_csv_after(path: &Path, max_first: f64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let log = MetricsLog::read_csv(path)?;
    let kept = MetricsLog {
        rows: log
            .rows
            .iter()
            .filter(|r| r.first().is_some_and(|&v| v <= max_first))
            .cloned()
            .collect(),
        columns: log.columns,
    };
    if kept.rows.len() != log.rows.len() {
        crate::vsgc::write_atomic(path, kept.to_csv().as_bytes())?;
    }
    Ok(())
}

impl MetricsSink for CsvMetrics {
    fn header(&mut self, columns: &[&str]) -> Result<()> {
        let line = columns.join(",");
        let existing = match File::open(&self.path) {
            Ok(f) => BufReader::new(f)
                .lines()
                .next()
                .transpose()
                .map_err(|e| Error::io(&self.path, e))?,
            Err(_) => None,
        };
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        match existing {
            Some(h) if h != line => {
                return Err(Error::format(
                    &self.path,
                    format!("existing header {h:?} differs from {line:?}"),
                ));
            }
            Some(_) => {}
            None => writeln!(file, "{line}").map_err(|e| Error::io(&self.path, e))?,
        }
        self.file = Some(file);
        self.columns = columns.len();
        Ok(())
    }

    fn row(&mut self, values: &[f64]) -> Result<()> {
        check_width(self.columns, values)?;
        let file = self
            .file
            .as_mut()
            .ok_or_else(|| Error::invalid("metrics header not written"))?;
        writeln!(file, "{}", format_row(values)).map_err(|e| Error::io(&self.path, e))?;
        file.flush().map_err(|e| Error::io(&self.path, e))
    }
}
