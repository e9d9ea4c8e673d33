//! Append-only results store plus the scenario-by-variant report table.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

pub const RESULTS_FILE: &str = "results.jsonl";

/// One evaluated scenario, one line in the store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRecord {
    /// Scenario id, e.g. "5w5s".
    pub scenario: String,
    pub n: usize,
    pub k: usize,
    pub ablation: String,
    pub m: usize,
    pub auc: f64,
    pub macro_f1: f64,
    pub episodes: usize,
    pub skipped: usize,
    pub checkpoint: String,
}

impl ResultRecord {
    pub fn from_report(report: &MetricsReport, checkpoint: &str) -> Self {
        ResultRecord {
            scenario: format!("{}w{}s", report.way, report.shot),
            n: report.way,
            k: report.shot,
            ablation: report.ablation.clone(),
            m: report.m,
            auc: report.auc,
            macro_f1: report.macro_f1,
            episodes: report.episodes,
            skipped: report.skipped,
            checkpoint: checkpoint.to_string(),
        }
    }
}

/// Appends one record to `<out_dir>/results.jsonl`.
pub fn append_record(out_dir: &Path, record: &ResultRecord) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join(RESULTS_FILE);
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(
        file,
        "{}",
        serde_json::to_string(record).expect("record serializes")
    )?;
    Ok(())
}

pub fn load_records(out_dir: &Path) -> Result<Vec<ResultRecord>> {
    let path = out_dir.join(RESULTS_FILE);
    if !path.exists() {
        return Err(Error::config(format!(
            "no results store at {}",
            path.display()
        )));
    }
    let content = fs::read_to_string(&path)?;
    let mut records = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ResultRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: lineno + 1,
            message: format!("results store: {e}"),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Renders records as a text table: one row per (variant, m), one column per
/// (N, K) scenario, cells "AUC/F1". Missing cells show an absent marker; a
/// scenario evaluated twice keeps the latest record.
pub fn render_table(records: &[ResultRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::config("results store is empty"));
    }
    let mut scenarios: Vec<(usize, usize)> = records.iter().map(|r| (r.n, r.k)).collect();
    scenarios.sort();
    scenarios.dedup();
    let mut rows: Vec<(String, usize)> = records
        .iter()
        .map(|r| (r.ablation.clone(), r.m))
        .collect();
    rows.sort();
    rows.dedup();

    let row_label = |ablation: &str, m: usize| -> String {
        if ablation == "slwla" {
            format!("{ablation} (m={m})")
        } else {
            ablation.to_string()
        }
    };

    let mut header: Vec<String> = vec!["model".to_string()];
    for (n, k) in &scenarios {
        header.push(format!("{n}-way {k}-shot AUC/F1"));
    }
    let mut lines: Vec<Vec<String>> = vec![header];
    for (ablation, m) in &rows {
        let mut line = vec![row_label(ablation, *m)];
        for (n, k) in &scenarios {
            let cell = records
                .iter()
                .rfind(|r| r.ablation == *ablation && r.m == *m && r.n == *n && r.k == *k);
            line.push(match cell {
                Some(r) => format!("{:.4}/{:.2}", r.auc, r.macro_f1),
                None => "-".to_string(),
            });
        }
        lines.push(line);
    }

    let widths: Vec<usize> = (0..lines[0].len())
        .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate() {
        let rendered: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(rendered.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    Ok(out)
}
