//! Ablation table assembly and emission.
//!
//! The table aggregates raw ablation rows into one line per grid cell:
//! mean post-adaptation error across seeds, shown to one decimal, with the
//! best cell(s) flagged. Cells that produced no rows (skipped or not yet
//! run) appear as gaps rather than being dropped, so a partial grid still
//! renders a complete 15-line table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::grid::{mean_post_by_cell, AblationRow, ExperimentGrid};

/// One aggregated table line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    /// Compact cell key: `C3` or `C3C5`.
    pub selection: String,
    /// Mean error in degrees across seeds; `None` marks a gap.
    pub mean_error_deg: Option<f64>,
    pub best: bool,
}

/// The aggregated ablation table, one row per grid cell in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<TableRow>,
}

impl AblationTable {
    /// Aggregates raw rows. Best-cell flagging compares errors at display
    /// precision (one decimal): every cell whose rounded mean equals the
    /// rounded minimum is flagged, so exact ties are all marked and two
    /// cells that print identically are never distinguished by hidden
    /// digits.
    pub fn from_rows(grid: &ExperimentGrid, rows: &[AblationRow]) -> AblationTable {
        let means = mean_post_by_cell(grid, rows);
        let rounded_min = means
            .iter()
            .filter_map(|(_, m)| m.map(round1))
            .fold(f64::INFINITY, f64::min);
        let rows = means
            .into_iter()
            .map(|(label, mean)| TableRow {
                selection: label.replace('+', ""),
                mean_error_deg: mean,
                best: mean.is_some_and(|m| round1(m) == rounded_min),
            })
            .collect();
        AblationTable { rows }
    }

    /// Human-readable text table: the five single-tap cells, then the ten
    /// pairs, gaps shown as `-`, best cells marked with `*`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("selection  mean_error_deg  best\n");
        for (i, row) in self.rows.iter().enumerate() {
            if i == 5 {
                out.push('\n');
            }
            let value = match row.mean_error_deg {
                Some(v) => format!("{:.1}", v),
                None => "-".to_string(),
            };
            let flag = if row.best { "*" } else { "" };
            out.push_str(&format!(
                "{:<9}  {:>14}  {}\n",
                row.selection, value, flag
            ));
        }
        out
    }

    /// CSV form. [`parse_table_csv`] reads it back; emit→parse→emit is
    /// byte-identical.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            let record = CsvRecord {
                selection: row.selection.clone(),
                mean_error_deg: row.mean_error_deg.map(|v| format!("{v:.1}")),
                best: if row.best { "*".into() } else { String::new() },
            };
            w.serialize(record).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| csv_err(e.into_error().into()))?;
        String::from_utf8(bytes)
            .map_err(|e| Error::Ingestion(format!("table CSV is not UTF-8: {e}")))
    }
}

/// Serialized table line; `mean_error_deg` stays a pre-formatted string so
/// emission is canonical.
#[derive(Serialize, Deserialize)]
struct CsvRecord {
    selection: String,
    mean_error_deg: Option<String>,
    best: String,
}

/// Parses [`AblationTable::to_csv`] output.
pub fn parse_table_csv(text: &str) -> Result<AblationTable> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.deserialize::<CsvRecord>() {
        let record = record.map_err(|e| Error::Ingestion(format!("bad table row: {e}")))?;
        let mean_error_deg = match record.mean_error_deg.as_deref() {
            None | Some("") => None,
            Some(s) => Some(s.parse::<f64>().map_err(|e| {
                Error::Ingestion(format!("bad mean_error_deg '{s}': {e}"))
            })?),
        };
        let best = match record.best.as_str() {
            "*" => true,
            "" => false,
            other => {
                return Err(Error::Ingestion(format!(
                    "bad best flag '{other}' (expected '*' or empty)"
                )))
            }
        };
        rows.push(TableRow {
            selection: record.selection,
            mean_error_deg,
            best,
        });
    }
    Ok(AblationTable { rows })
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

fn csv_err(e: csv::Error) -> Error {
    Error::Ingestion(format!("table CSV: {e}"))
}
