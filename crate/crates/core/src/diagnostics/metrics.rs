use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DiagError;

pub const METRIC_COLUMNS: [&str; 11] = [
    "wall_clock",
    "env_steps",
    "grad_steps",
    "model_steps",
    "eval_return_mean",
    "eval_return_std",
    "q_loss",
    "model_loss",
    "epsilon",
    "q_discrepancy",
    "target_variance_estimate",
];

/// One evaluation interval. Values that were not measured are NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub wall_clock: f64,
    pub env_steps: u64,
    pub grad_steps: u64,
    pub model_steps: u64,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub q_loss: f64,
    pub model_loss: f64,
    pub epsilon: f64,
    pub q_discrepancy: f64,
    pub target_variance_estimate: f64,
}

impl MetricsRow {
    pub fn get(&self, key: &str) -> Option<f64> {
        Some(match key {
            "wall_clock" => self.wall_clock,
            "env_steps" => self.env_steps as f64,
            "grad_steps" => self.grad_steps as f64,
            "model_steps" => self.model_steps as f64,
            "eval_return_mean" => self.eval_return_mean,
            "eval_return_std" => self.eval_return_std,
            "q_loss" => self.q_loss,
            "model_loss" => self.model_loss,
            "epsilon" => self.epsilon,
            "q_discrepancy" => self.q_discrepancy,
            "target_variance_estimate" => self.target_variance_estimate,
            _ => return None,
        })
    }

    fn to_line(self) -> String {
        METRIC_COLUMNS
            .iter()
            .map(|k| format_value(self.get(k).expect("known column")))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Shortest round-trip decimal, with `nan`/`inf`/`-inf` sentinels.
pub fn format_value(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x}")
    }
}

pub fn parse_value(s: &str) -> Option<f64> {
    match s.trim() {
        "nan" => Some(f64::NAN),
        other => other.parse().ok(),
    }
}

/// Appends rows to a metrics file, flushing after each one.
#[derive(Debug)]
pub struct MetricsWriter {
    file: File,
}

impl MetricsWriter {
    /// Truncates `path` and writes the header.
    pub fn create(path: &Path) -> Result<Self, DiagError> {
        let mut file = File::create(path)?;
        writeln!(file, "{}", METRIC_COLUMNS.join(","))?;
        file.flush()?;
        Ok(Self { file })
    }

    /// Opens `path` for appending, writing the header only if it is new.
    pub fn append(path: &Path) -> Result<Self, DiagError> {
        let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(file, "{}", METRIC_COLUMNS.join(","))?;
        }
        file.flush()?;
        Ok(Self { file })
    }

    pub fn write_row(&mut self, row: &MetricsRow) -> Result<(), DiagError> {
        writeln!(self.file, "{}", row.to_line())?;
        self.file.flush()?;
        Ok(())
    }
}

pub fn emit_metrics(rows: &[MetricsRow], path: &Path) -> Result<(), DiagError> {
    if rows.is_empty() {
        return Err(DiagError::EmptyInput("metrics rows"));
    }
    let mut w = MetricsWriter::create(path)?;
    for r in rows {
        w.write_row(r)?;
    }
    Ok(())
}

/// A parsed metrics file: header names and numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl MetricsTable {
    pub fn read(path: &Path) -> Result<Self, DiagError> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header = lines.next().ok_or(DiagError::EmptyInput("metrics file"))??;
        let columns: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Option<Vec<f64>> = line.split(',').map(parse_value).collect();
            match vals {
                Some(v) if v.len() == columns.len() => rows.push(v),
                _ => {
                    return Err(DiagError::Parse {
                        path: path.display().to_string(),
                        line: i + 2,
                    })
                }
            }
        }
        Ok(Self { columns, rows })
    }

    pub fn column(&self, key: &str) -> Result<Vec<f64>, DiagError> {
        let idx = self
            .columns
            .iter()
            .position(|c| c == key)
            .ok_or_else(|| DiagError::MissingKey(key.to_string()))?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn to_rows(&self) -> Result<Vec<MetricsRow>, DiagError> {
        let cols: Vec<Vec<f64>> = METRIC_COLUMNS
            .iter()
            .map(|k| self.column(k))
            .collect::<Result<_, _>>()?;
        Ok((0..self.rows.len())
            .map(|i| MetricsRow {
                wall_clock: cols[0][i],
                env_steps: cols[1][i] as u64,
                grad_steps: cols[2][i] as u64,
                model_steps: cols[3][i] as u64,
                eval_return_mean: cols[4][i],
                eval_return_std: cols[5][i],
                q_loss: cols[6][i],
                model_loss: cols[7][i],
                epsilon: cols[8][i],
                q_discrepancy: cols[9][i],
                target_variance_estimate: cols[10][i],
            })
            .collect())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, DiagError> {
    MetricsTable::read(path)?.to_rows()
}
