//! CSV tables, run metadata and input hashing.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use astrec::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Shortest representation that parses back to the same f64; empty for missing.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Header plus rows, written with RFC 4180 quoting.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Append `mean` and `stderr` rows over the numeric columns of `rows`.
    ///
    /// `label_col` receives the row label; columns in `keep` copy the value
    /// shared by all rows (or stay empty if they differ).
    pub fn push_mean_stderr(&mut self, rows: &[Vec<String>], label_col: usize, keep: &[usize]) {
        if rows.is_empty() {
            return;
        }
        let width = self.header.len();
        let mut mean_row = vec![String::new(); width];
        let mut se_row = vec![String::new(); width];
        mean_row[label_col] = "mean".into();
        se_row[label_col] = "stderr".into();
        for col in 0..width {
            if col == label_col {
                continue;
            }
            if keep.contains(&col) {
                if rows.iter().all(|r| r[col] == rows[0][col]) {
                    mean_row[col] = rows[0][col].clone();
                    se_row[col] = rows[0][col].clone();
                }
                continue;
            }
            let values: Option<Vec<f64>> = rows.iter().map(|r| r[col].parse::<f64>().ok()).collect();
            if let Some(v) = values {
                let (m, se) = mean_stderr(&v);
                mean_row[col] = fmt_f64(m);
                se_row[col] = fmt_f64(se);
            }
        }
        self.rows.push(mean_row);
        self.rows.push(se_row);
    }
}

/// Mean and standard error (sample standard deviation over sqrt(n)).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

/// Contents of `run.json`: what ran, on which seeds and inputs.
#[derive(Debug, Serialize)]
pub struct RunInfo {
    pub command: String,
    pub version: &'static str,
    pub seeds: Vec<u64>,
    pub inputs: Vec<InputHash>,
}

impl RunInfo {
    pub fn new(command: &str, seeds: Vec<u64>, inputs: &[PathBuf]) -> Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(InputHash {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RunInfo {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION"),
            seeds,
            inputs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_text() {
        for x in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.6457] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn mean_stderr_by_hand() {
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // sample variance 5/3, stderr sqrt(5/12)
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn quoting_follows_rfc4180() {
        let mut t = Table::new(["a", "b"]);
        t.push(vec!["w/o A".into(), "x,\"y\"".into()]);
        assert_eq!(t.to_csv(), "a,b\nw/o A,\"x,\"\"y\"\"\"\n");
    }

    #[test]
    fn summary_rows_skip_text_columns() {
        let mut t = Table::new(["seed", "objective", "v"]);
        let rows = vec![
            vec!["0".into(), "ast".into(), "1".into()],
            vec!["1".into(), "ast".into(), "3".into()],
        ];
        t.push_mean_stderr(&rows, 0, &[1]);
        assert_eq!(t.rows[0], vec!["mean", "ast", "2"]);
        assert_eq!(t.rows[1], vec!["stderr", "ast", "1"]);
    }
}
