//! Result serialization: JSON documents plus flat CSVs with a stable,
//! documented column order, the plot-ready form of every experiment.
//!
//! Metric CSV columns are `acc_at_<K>` for each reported K in ascending
//! order, then `macro_p, macro_r, macro_f1, query_count,
//! search_space_size, mean_query_time_ms`. Floats are printed in Rust's
//! shortest round-trip form, so identical values serialize to identical
//! bytes.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::MetricsReport;

/// Pretty JSON document with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

/// Column names of [`metrics_csv_row`] for the given ACC@K list.
pub fn metrics_csv_header(acc_ks: &[u32]) -> String {
    let mut cols: Vec<String> = acc_ks.iter().map(|k| format!("acc_at_{k}")).collect();
    cols.extend(
        ["macro_p", "macro_r", "macro_f1", "query_count", "search_space_size", "mean_query_time_ms"]
            .map(String::from),
    );
    cols.join(",")
}

/// One flat CSV row per experiment, matching [`metrics_csv_header`].
pub fn metrics_csv_row(report: &MetricsReport) -> String {
    let mut cells: Vec<String> = report.acc_at.values().map(|v| v.to_string()).collect();
    cells.push(report.macro_p.to_string());
    cells.push(report.macro_r.to_string());
    cells.push(report.macro_f1.to_string());
    cells.push(report.query_count.to_string());
    cells.push(report.search_space_size.to_string());
    cells.push(report.mean_query_time_ms.to_string());
    cells.join(",")
}

/// Header plus row, newline-terminated: the content of `report.csv`.
pub fn metrics_csv(report: &MetricsReport) -> String {
    let ks: Vec<u32> = report.acc_at.keys().copied().collect();
    format!("{}\n{}\n", metrics_csv_header(&ks), metrics_csv_row(report))
}

/// A tidy table: one row per grid point of a sweep, fixed column set.
#[derive(Debug, Clone, Serialize)]
pub struct TidyTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl TidyTable {
    pub fn new(columns: &[&str]) -> TidyTable {
        TidyTable { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push_row(&mut self, cells: Vec<String>) -> Result<()> {
        if cells.len() != self.columns.len() {
            return Err(Error::LengthMismatch(format!(
                "tidy row has {} cells, table has {} columns",
                cells.len(),
                self.columns.len()
            )));
        }
        self.rows.push(cells);
        Ok(())
    }

    /// RFC-4180-style CSV; cells containing separators or quotes are quoted.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let write_row = |out: &mut String, cells: &[String]| {
            for (i, cell) in cells.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                if cell.contains([',', '"', '\n', '\r']) {
                    out.push('"');
                    out.push_str(&cell.replace('"', "\"\""));
                    out.push('"');
                } else {
                    out.push_str(cell);
                }
            }
            out.push('\n');
        };
        write_row(&mut out, &self.columns);
        for row in &self.rows {
            write_row(&mut out, row);
        }
        out
    }
}

/// Square matrix as CSV: a corner label, column IDs, one labeled row each.
pub fn matrix_csv(corner: &str, labels: &[u64], matrix: &[Vec<f64>]) -> Result<String> {
    if labels.len() != matrix.len() || matrix.iter().any(|r| r.len() != labels.len()) {
        return Err(Error::LengthMismatch(format!(
            "matrix of {} rows does not match {} labels",
            matrix.len(),
            labels.len()
        )));
    }
    let mut out = String::from(corner);
    for l in labels {
        out.push(',');
        out.push_str(&l.to_string());
    }
    out.push('\n');
    for (l, row) in labels.iter().zip(matrix) {
        out.push_str(&l.to_string());
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    Ok(out)
}
