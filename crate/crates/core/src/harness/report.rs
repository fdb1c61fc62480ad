use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One line of the final table: clean accuracy plus robust accuracy under
/// each attack, as fractions.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub cln: f64,
    pub pwws: Option<f64>,
    pub ga: Option<f64>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CellFailure {
    pub label: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<CellFailure>,
}

impl Summary {
    pub fn row(&self, label: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

fn pct(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.1}", v * 100.0),
        None => "-".to_string(),
    }
}

/// Fixed-width table with accuracies in percent.
pub fn format_table(summary: &Summary) -> String {
    let width = summary
        .rows
        .iter()
        .map(|r| r.label.len())
        .chain(summary.failures.iter().map(|f| f.label.len()))
        .chain(std::iter::once("config".len()))
        .max()
        .unwrap_or(6);
    let mut out = format!(
        "{:<w$}  {:>6}  {:>6}  {:>6}\n",
        "config",
        "CLN",
        "PWWS",
        "GA",
        w = width
    );
    for r in &summary.rows {
        out.push_str(&format!(
            "{:<w$}  {:>6}  {:>6}  {:>6}\n",
            r.label,
            pct(Some(r.cln)),
            pct(r.pwws),
            pct(r.ga),
            w = width
        ));
    }
    for f in &summary.failures {
        out.push_str(&format!("{:<w$}  FAILED: {}\n", f.label, f.error, w = width));
    }
    out
}

/// Writes `<name>.json` and `<name>.txt` into `dir`.
pub fn write_summary(dir: &Path, name: &str, summary: &Summary) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json_path = dir.join(format!("{}.json", name));
    let txt_path = dir.join(format!("{}.txt", name));
    let json = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::Data(format!("serialize summary: {}", e)))?;
    fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
    fs::write(&txt_path, format_table(summary)).map_err(|e| Error::io(&txt_path, e))?;
    Ok((json_path, txt_path))
}
