//! Result rows and the geomean comparison table built from them.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// One optimisation run. `speedup` is `baseline_time / step_time`, zero when
/// no valid decision was found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub graph: String,
    pub family: String,
    pub method: String,
    pub tasks: String,
    pub step_time: f64,
    pub baseline_time: f64,
    pub speedup: f64,
    pub wall_clock: f64,
    pub seed: u64,
}

impl ResultRow {
    pub fn speedup_of(step_time: f64, baseline_time: f64) -> f64 {
        if step_time.is_finite() && step_time > 0.0 {
            baseline_time / step_time
        } else {
            0.0
        }
    }
}

pub fn write_results<W: Write>(w: W, rows: &[ResultRow]) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|e| CliError::io("results csv", e))?;
    }
    out.flush().map_err(|e| CliError::io("results csv", e))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, CliError> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    rdr.deserialize()
        .collect::<Result<Vec<ResultRow>, _>>()
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Geometric mean; any zero speedup (a failed run) makes it zero.
pub fn geomean(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "geomean of nothing");
    (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub tasks: String,
    /// A family name, or `overall`.
    pub family: String,
    pub runs: usize,
    pub geomean_speedup: f64,
}

pub const OVERALL: &str = "overall";

/// One row per (method, tasks, family) and one `overall` row per
/// (method, tasks). Speedups are recomputed from the time columns.
pub fn summarize(rows: &[ResultRow]) -> Result<Vec<SummaryRow>, CliError> {
    if rows.is_empty() {
        return Err(CliError::Validation("no result rows to report".into()));
    }
    let mut groups: BTreeMap<(String, String), BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.method.clone(), r.tasks.clone()))
            .or_default()
            .entry(r.family.clone())
            .or_default()
            .push(ResultRow::speedup_of(r.step_time, r.baseline_time));
    }
    let mut out = Vec::new();
    for ((method, tasks), families) in groups {
        let row = |family: &str, v: &[f64]| SummaryRow {
            method: method.clone(),
            tasks: tasks.clone(),
            family: family.to_owned(),
            runs: v.len(),
            geomean_speedup: geomean(v),
        };
        let all: Vec<f64> = families.values().flatten().copied().collect();
        for (family, v) in &families {
            out.push(row(family, v));
        }
        out.push(row(OVERALL, &all));
    }
    Ok(out)
}

pub fn write_summary_csv<W: Write>(w: W, rows: &[SummaryRow]) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|e| CliError::io("report csv", e))?;
    }
    out.flush().map_err(|e| CliError::io("report csv", e))
}

/// Left-aligned text columns, speedups to three decimals.
pub fn format_table(rows: &[SummaryRow]) -> String {
    let header = ["method", "tasks", "family", "runs", "geomean_speedup"].map(String::from);
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [r.method.clone(), r.tasks.clone(), r.family.clone(), r.runs.to_string(), format!("{:.3}", r.geomean_speedup)]
        })
        .collect();
    let mut widths = header.clone().map(|h| h.len());
    for line in &body {
        for (w, cell) in widths.iter_mut().zip(line) {
            *w = (*w).max(cell.len());
        }
    }
    let mut text = String::new();
    for line in std::iter::once(&header).chain(&body) {
        let cells: Vec<String> = line.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        text.push_str(cells.join("  ").trim_end());
        text.push('\n');
    }
    text
}
