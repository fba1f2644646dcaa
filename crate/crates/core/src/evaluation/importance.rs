use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::metrics::{auc, spearman};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mtl::ModelGraph;
use crate::scalar::Scalar;

pub const DEFAULT_REPEATS: usize = 5;

fn task_auc<S: Scalar>(model: &ModelGraph<S>, data: &Dataset, task: usize, batch_size: usize) -> Result<f64> {
    let preds = model.predict(data, batch_size)?;
    let scores: Vec<f64> = preds.column(task).iter().map(|v| v.as_f64()).collect();
    auc(&scores, &data.labels(task))
}

fn all_task_aucs<S: Scalar>(model: &ModelGraph<S>, data: &Dataset, batch_size: usize) -> Result<Vec<f64>> {
    let preds = model.predict(data, batch_size)?;
    (0..model.n_tasks())
        .map(|k| {
            let scores: Vec<f64> = preds.column(k).iter().map(|v| v.as_f64()).collect();
            auc(&scores, &data.labels(k))
        })
        .collect()
}

/// `mean_r (AUC_base − AUC(permute(feature, seed + r)))` for one task.
pub fn permutation_feature_importance<S: Scalar>(
    model: &ModelGraph<S>,
    data: &Dataset,
    feature: &str,
    task: &str,
    repeats: usize,
    seed: u64,
    batch_size: usize,
) -> Result<f64> {
    let k = data
        .schema()
        .task_index(task)
        .ok_or_else(|| Error::UnknownTask(task.to_string()))?;
    if repeats == 0 {
        return Err(Error::Metric("repeats must be at least 1".into()));
    }
    let base = task_auc(model, data, k, batch_size)?;
    let mut total = 0.0;
    for r in 0..repeats {
        let permuted = data.permute_feature(feature, seed.wrapping_add(r as u64))?;
        total += base - task_auc(model, &permuted, k, batch_size)?;
    }
    Ok(total / repeats as f64)
}

/// Per-feature, per-task permutation importance with ranks and cross-task rank correlation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiReport {
    pub features: Vec<String>,
    pub tasks: Vec<String>,
    /// `fi[feature][task]`.
    pub fi: Vec<Vec<f64>>,
    /// 1-based descending rank of each feature within each task.
    pub ranks: Vec<Vec<usize>>,
    pub baseline_auc: Vec<f64>,
    /// Spearman correlation of FI values for every task pair `(a, b, rho)`.
    pub correlations: Vec<(String, String, Option<f64>)>,
    pub repeats: usize,
    pub seed: u64,
}

/// Computes FI for every feature and task; features are evaluated in parallel.
pub fn fi_report<S: Scalar>(
    model: &ModelGraph<S>,
    data: &Dataset,
    features: Option<&[String]>,
    repeats: usize,
    seed: u64,
    batch_size: usize,
) -> Result<FiReport> {
    if repeats == 0 {
        return Err(Error::Metric("repeats must be at least 1".into()));
    }
    let schema = data.schema();
    let features: Vec<String> = match features {
        Some(f) => f.to_vec(),
        None => schema.features.iter().map(|f| f.name.clone()).collect(),
    };
    for f in &features {
        if schema.feature_index(f).is_none() {
            return Err(Error::UnknownFeature(f.clone()));
        }
    }
    let tasks = schema.tasks.clone();
    let base = all_task_aucs(model, data, batch_size)?;
    let fi = features
        .par_iter()
        .map(|f| {
            let mut sums = vec![0.0; tasks.len()];
            for r in 0..repeats {
                let permuted = data.permute_feature(f, seed.wrapping_add(r as u64))?;
                for ((s, a), b) in sums.iter_mut().zip(all_task_aucs(model, &permuted, batch_size)?).zip(&base) {
                    *s += b - a;
                }
            }
            Ok(sums.iter().map(|s| s / repeats as f64).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FiReport::from_values(features, tasks, fi, base, repeats, seed))
}

impl FiReport {
    pub fn from_values(
        features: Vec<String>,
        tasks: Vec<String>,
        fi: Vec<Vec<f64>>,
        baseline_auc: Vec<f64>,
        repeats: usize,
        seed: u64,
    ) -> Self {
        let n = features.len();
        let mut ranks = vec![vec![0; tasks.len()]; n];
        for k in 0..tasks.len() {
            let mut order: Vec<usize> = (0..n).collect();
            // Descending FI; ties keep schema order.
            order.sort_by(|&a, &b| fi[b][k].total_cmp(&fi[a][k]).then(a.cmp(&b)));
            for (rank, &f) in order.iter().enumerate() {
                ranks[f][k] = rank + 1;
            }
        }
        let mut report = Self {
            features,
            tasks,
            fi,
            ranks,
            baseline_auc,
            correlations: Vec::new(),
            repeats,
            seed,
        };
        let all: Vec<usize> = (0..n).collect();
        for a in 0..report.tasks.len() {
            for b in a + 1..report.tasks.len() {
                let rho = report.correlation_over(&all, a, b);
                report.correlations.push((report.tasks[a].clone(), report.tasks[b].clone(), rho));
            }
        }
        report
    }

    pub fn value(&self, feature: &str, task: usize) -> Option<f64> {
        let f = self.features.iter().position(|x| x == feature)?;
        Some(self.fi[f][task])
    }

    /// Spearman correlation of tasks `a` and `b` over a subset of feature rows.
    pub fn correlation_over(&self, rows: &[usize], a: usize, b: usize) -> Option<f64> {
        let xa: Vec<f64> = rows.iter().map(|&f| self.fi[f][a]).collect();
        let xb: Vec<f64> = rows.iter().map(|&f| self.fi[f][b]).collect();
        spearman(&xa, &xb)
    }

    /// `feature,fi_<task>...,rank_<task>...`
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        let mut header = vec!["feature".to_string()];
        header.extend(self.tasks.iter().map(|t| format!("fi_{t}")));
        header.extend(self.tasks.iter().map(|t| format!("rank_{t}")));
        writeln!(out, "{}", header.join(",")).expect("vec write");
        for (f, name) in self.features.iter().enumerate() {
            let mut row = vec![name.clone()];
            row.extend(self.fi[f].iter().map(|v| format!("{v:.6}")));
            row.extend(self.ranks[f].iter().map(|r| r.to_string()));
            writeln!(out, "{}", row.join(",")).expect("vec write");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// `feature,x,y` with x = FI of the first task and y = FI of the second.
    pub fn write_scatter_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if self.tasks.len() < 2 {
            return Err(Error::Metric("scatter data needs two tasks".into()));
        }
        let mut out = Vec::new();
        writeln!(out, "feature,x,y").expect("vec write");
        for (f, name) in self.features.iter().enumerate() {
            writeln!(out, "{name},{:.6},{:.6}", self.fi[f][0], self.fi[f][1]).expect("vec write");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}
