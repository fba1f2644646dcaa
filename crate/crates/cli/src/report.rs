//! Run records, the metrics table and cross-run comparison.

use std::fmt::Write as _;
use std::path::Path;

use dtn_core::evaluation::rela_impr;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const RUN_FILE: &str = "run.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "model,task,auc,logloss,relaimpr_pct";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    pub auc: Option<f64>,
    pub logloss: Option<f64>,
}

/// What a training run leaves behind besides its checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub name: String,
    pub architecture: String,
    pub precision: String,
    /// Content hash of the encoded train and test data.
    pub fingerprint: String,
    pub parameters: usize,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub status: serde_json::Value,
    pub metrics: Vec<TaskMetrics>,
}

impl RunInfo {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(RUN_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RUN_FILE);
        let text = serde_json::to_string_pretty(self).expect("run info serializes");
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    pub fn task(&self, task: &str) -> Option<&TaskMetrics> {
        self.metrics.iter().find(|m| m.task == task)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub model: String,
    pub task: String,
    pub auc: Option<f64>,
    pub logloss: Option<f64>,
    pub relaimpr_pct: Option<f64>,
}

fn opt(v: Option<f64>, f: impl Fn(f64) -> String) -> String {
    v.map(f).unwrap_or_default()
}

pub fn format_metrics(rows: &[MetricRow]) -> String {
    let mut out = String::new();
    writeln!(out, "{METRICS_HEADER}").unwrap();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.model,
            r.task,
            opt(r.auc, |v| format!("{v:.4}")),
            opt(r.logloss, |v| format!("{v:.4}")),
            opt(r.relaimpr_pct, |v| format!("{v:+.2}")),
        )
        .unwrap();
    }
    out
}

pub fn write_metrics(rows: &[MetricRow], path: &Path) -> Result<()> {
    std::fs::write(path, format_metrics(rows)).map_err(|e| CliError::io(path, e))
}

/// Rows of one run, with RelaImpr against `baseline` when given.
pub fn run_rows(run: &RunInfo, baseline: Option<&RunInfo>, metrics: &[String]) -> Result<Vec<MetricRow>> {
    if let Some(b) = baseline {
        if b.fingerprint != run.fingerprint {
            return Err(CliError::Compare(format!(
                "`{}` and baseline `{}` were trained on different datasets",
                run.name, b.name
            )));
        }
    }
    let wants = |m: &str| metrics.iter().any(|x| x == m);
    Ok(run
        .metrics
        .iter()
        .map(|m| {
            let base_auc = baseline.and_then(|b| b.task(&m.task)).and_then(|t| t.auc);
            MetricRow {
                model: run.name.clone(),
                task: m.task.clone(),
                auc: m.auc.filter(|_| wants("auc")),
                logloss: m.logloss.filter(|_| wants("logloss")),
                relaimpr_pct: match (m.auc, base_auc) {
                    (Some(a), Some(b)) => rela_impr(a, b).ok(),
                    _ => None,
                },
            }
        })
        .collect())
}

/// Table-2-style comparison of several runs against the one named `baseline`.
pub fn compare_runs(run_dirs: &[impl AsRef<Path>], baseline: &str) -> Result<Vec<MetricRow>> {
    let runs = run_dirs
        .iter()
        .map(|d| RunInfo::load(d.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    for (i, r) in runs.iter().enumerate() {
        if runs[..i].iter().any(|o| o.name == r.name) {
            return Err(CliError::Compare(format!("two runs are named `{}`", r.name)));
        }
    }
    let base = runs
        .iter()
        .find(|r| r.name == baseline)
        .ok_or_else(|| CliError::Compare(format!("baseline run `{baseline}` is not among the runs")))?;
    let all: Vec<String> = crate::config::METRICS.iter().map(|m| m.to_string()).collect();
    let mut rows = Vec::new();
    for r in &runs {
        rows.extend(run_rows(r, Some(base), &all)?);
    }
    Ok(rows)
}
