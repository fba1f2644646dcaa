use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::forward::ForwardOptions;
use super::graph::{GateRole, ModelGraph};
use crate::data::{Dataset, ExampleBatch};
use crate::error::{Error, Result};
use crate::interactions::FimKind;
use crate::scalar::Scalar;

/// Identity of one gate candidate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateInfo {
    pub owner: String,
    pub set: usize,
    pub module: usize,
    pub kind: FimKind,
    /// Scaled by the preceding task's prediction.
    pub scaled: bool,
}

/// Dataset-mean softmax weights of one gate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateWeights {
    pub task: String,
    pub role: GateRole,
    pub candidates: Vec<CandidateInfo>,
    pub mean_weights: Vec<f64>,
}

impl GateWeights {
    /// Candidate index with the largest mean weight.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, w) in self.mean_weights.iter().enumerate() {
            if *w > self.mean_weights[best] {
                best = i;
            }
        }
        best
    }
}

impl<S: Scalar> ModelGraph<S> {
    /// Mean gate weights over every row of `data`.
    pub fn extract_gate_weights(&self, data: &Dataset, batch_size: usize) -> Result<Vec<GateWeights>> {
        if self.graph.gates.is_empty() {
            return Err(Error::Build(format!("{} has no gates", self.graph.kind)));
        }
        if data.is_empty() {
            return Err(Error::Metric("gate weights need at least one example".into()));
        }
        let batches: Vec<ExampleBatch> = data.batches(batch_size, false, 0)?.collect();
        let sums = batches
            .par_iter()
            .map(|b| {
                let out = self.forward_with(b, &ForwardOptions::default())?;
                Ok(out
                    .gate_weights
                    .iter()
                    .map(|w| w.columns().into_iter().map(|c| c.iter().map(|v| v.as_f64()).sum()).collect())
                    .collect::<Vec<Vec<f64>>>())
            })
            .collect::<Result<Vec<_>>>()?;
        let n = data.len() as f64;
        let reports = self
            .graph
            .gates
            .iter()
            .enumerate()
            .map(|(g, gate)| {
                let mut mean = vec![0.0; gate.candidates.len()];
                for batch in &sums {
                    for (m, s) in mean.iter_mut().zip(&batch[g]) {
                        *m += s;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                GateWeights {
                    task: self.graph.tasks[gate.task].name.clone(),
                    role: gate.role,
                    candidates: gate
                        .candidates
                        .iter()
                        .map(|c| CandidateInfo {
                            owner: self.graph.sets[c.set].owner.name().to_string(),
                            set: c.set,
                            module: c.module,
                            kind: self.graph.module(c.set, c.module).kind(),
                            scaled: c.scaled_by.is_some(),
                        })
                        .collect(),
                    mean_weights: mean,
                }
            })
            .collect();
        Ok(reports)
    }
}

/// Writes `task,gate,owner,module,kind,scaled,mean_weight` rows.
pub fn write_gate_weights_csv(reports: &[GateWeights], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    writeln!(out, "task,gate,owner,module,kind,scaled,mean_weight").expect("vec write");
    for r in reports {
        for (c, w) in r.candidates.iter().zip(&r.mean_weights) {
            writeln!(
                out,
                "{},{},{},{},{},{},{:.6}",
                r.task,
                r.role.as_str(),
                c.owner,
                c.module,
                c.kind,
                c.scaled,
                w
            )
            .expect("vec write");
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
