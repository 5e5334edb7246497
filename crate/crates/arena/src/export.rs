//! CSV export of a phase's evaluations.
//!
//! Columns are `submitter_id,submission_id,phase,eval_timestamp`, then the
//! phase's board metrics in board order with `overall_score` last. Rows are
//! every evaluation of the phase in chronological order (ties by submission
//! id). Numbers carry six decimals; a missing metric is an empty cell.

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;

use crate::store::Snapshot;
use crate::{ArenaError, Config, Result};

const FIXED: [&str; 4] = ["submitter_id", "submission_id", "phase", "eval_timestamp"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvRow {
    pub submitter_id: String,
    pub submission_id: u64,
    pub phase: String,
    pub eval_timestamp: DateTime<Utc>,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvTable {
    pub metrics: Vec<String>,
    pub rows: Vec<CsvRow>,
}

/// Metric columns of `phase`: board order, `overall_score` last.
pub fn metric_columns(config: &Config, phase: &str) -> Result<Vec<String>> {
    let board = config.board(phase).ok_or_else(|| ArenaError::NotFound(format!("unknown phase {phase:?}")))?;
    let mut keys: Vec<String> = board.metrics.iter().map(|m| m.key.clone()).filter(|k| k != "overall_score").collect();
    keys.push("overall_score".into());
    Ok(keys)
}

pub fn table(config: &Config, snapshot: &Snapshot, phase: &str) -> Result<CsvTable> {
    let metrics = metric_columns(config, phase)?;
    let mut records: Vec<_> = snapshot.evaluations_in(phase).collect();
    records.sort_by_key(|r| (r.eval_timestamp, r.submission_id));
    let rows = records
        .into_iter()
        .map(|r| CsvRow {
            submitter_id: r.submitter_id.clone(),
            submission_id: r.submission_id,
            phase: r.phase.clone(),
            eval_timestamp: r.eval_timestamp,
            values: metrics.iter().map(|k| r.metrics.get(k)).collect(),
        })
        .collect();
    Ok(CsvTable { metrics, rows })
}

fn format_value(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_finite() => format!("{v:.6}"),
        _ => String::new(),
    }
}

pub fn write(table: &CsvTable) -> Result<String> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let csv_err = |e: csv::Error| ArenaError::Store(format!("csv: {e}"));
    let header: Vec<&str> = FIXED.iter().copied().chain(table.metrics.iter().map(String::as_str)).collect();
    out.write_record(&header).map_err(csv_err)?;
    for row in &table.rows {
        let mut cells = vec![
            row.submitter_id.clone(),
            row.submission_id.to_string(),
            row.phase.clone(),
            row.eval_timestamp.to_rfc3339_opts(SecondsFormat::Micros, true),
        ];
        cells.extend(row.values.iter().map(|v| format_value(*v)));
        out.write_record(&cells).map_err(csv_err)?;
    }
    let bytes = out.into_inner().map_err(|e| ArenaError::Store(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn export_csv(config: &Config, snapshot: &Snapshot, phase: &str) -> Result<String> {
    write(&table(config, snapshot, phase)?)
}

/// Reads an exported CSV back.
pub fn parse(text: &str) -> Result<CsvTable> {
    let bad = |msg: String| ArenaError::Input(format!("csv: {msg}"));
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.len() < FIXED.len() || FIXED.iter().zip(header.iter()).any(|(a, b)| *a != b) {
        return Err(bad(format!("header must start with {}", FIXED.join(","))));
    }
    let metrics: Vec<String> = header.iter().skip(FIXED.len()).map(String::from).collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let line = i + 2;
        let submission_id = record[1].parse().map_err(|e| bad(format!("line {line}: submission_id: {e}")))?;
        let eval_timestamp = DateTime::parse_from_rfc3339(&record[3])
            .map_err(|e| bad(format!("line {line}: eval_timestamp: {e}")))?
            .with_timezone(&Utc);
        let values = record
            .iter()
            .skip(FIXED.len())
            .zip(&metrics)
            .map(|(cell, key)| {
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>().map(Some).map_err(|e| bad(format!("line {line}: {key}: {e}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(CsvRow {
            submitter_id: record[0].to_string(),
            submission_id,
            phase: record[2].to_string(),
            eval_timestamp,
            values,
        });
    }
    Ok(CsvTable { metrics, rows })
}
