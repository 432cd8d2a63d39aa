//! Run output: per-round JSON lines, a summary document and comparison tables.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{RoundRecord, Summary};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    #[serde(flatten)]
    pub record: RoundRecord,
}

pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            out: BufWriter::new(file),
            path,
        })
    }

    pub fn write(&mut self, method: &str, record: &RoundRecord) -> Result<()> {
        let row = MetricsRow {
            method: method.to_string(),
            record: record.clone(),
        };
        serde_json::to_writer(&mut self.out, &row)?;
        self.out
            .write_all(b"\n")
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn write_summary(path: impl AsRef<Path>, summary: &Summary) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(summary)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<Summary> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads a metrics file, checking it is non-empty, single-method and in round order.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let fail = |reason: String| Error::Metrics {
        path: path.to_path_buf(),
        reason,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<MetricsRow> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: MetricsRow =
            serde_json::from_str(&line).map_err(|e| fail(format!("line {}: {e}", i + 1)))?;
        if let Some(prev) = rows.last() {
            if row.method != prev.method {
                return Err(fail(format!(
                    "line {}: mixes methods {} and {}",
                    i + 1,
                    prev.method,
                    row.method
                )));
            }
            if row.record.round != prev.record.round + 1 {
                return Err(fail(format!(
                    "line {}: round {} follows {}",
                    i + 1,
                    row.record.round,
                    prev.record.round
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(fail("no rounds recorded".into()));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub method: String,
    pub rounds: usize,
    pub top_accuracy: f64,
    pub transmissions: usize,
    pub modal_p: usize,
}

pub fn compare(paths: &[PathBuf]) -> Result<Vec<CompareRow>> {
    if paths.is_empty() {
        return Err(Error::Empty(
            "compare needs at least one metrics file".into(),
        ));
    }
    paths
        .iter()
        .map(|path| {
            let rows = read_metrics(path)?;
            let method = rows[0].method.clone();
            let records: Vec<RoundRecord> = rows.into_iter().map(|r| r.record).collect();
            let s = Summary::from_records(method, &records)?;
            Ok(CompareRow {
                method: s.method,
                rounds: s.rounds,
                top_accuracy: s.top_accuracy,
                transmissions: s.total_uploads,
                modal_p: s.modal_p,
            })
        })
        .collect()
}

pub fn render_table(rows: &[CompareRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.method.len())
        .max()
        .unwrap_or(0)
        .max("method".len());
    let mut out = format!(
        "{:<width$}  {:>6}  {:>12}  {:>13}  {:>7}\n",
        "method", "rounds", "top_accuracy", "transmissions", "modal_p"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:>6}  {:>12.4}  {:>13}  {:>7}\n",
            r.method, r.rounds, r.top_accuracy, r.transmissions, r.modal_p
        ));
    }
    out
}
