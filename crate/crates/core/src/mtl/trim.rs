use indexmap::IndexMap;
use ndarray::Axis;
use serde::Serialize;

use super::gates::GateWeights;
use super::graph::{ModelGraph, TowerPart};
use crate::error::{Error, Result};
use crate::interactions::FimKind;
use crate::scalar::Scalar;

/// Which modules survive a trim.
#[derive(Debug, Clone, PartialEq)]
pub enum TrimRule {
    /// Module indices to keep, per set owner (`shared` or a task name); unlisted sets are untouched.
    Keep(IndexMap<String, Vec<usize>>),
    /// Explicit `(owner, module index)` removals.
    Remove(Vec<(String, usize)>),
    /// Drop every module whose largest mean weight over the gates that read it is below the threshold.
    Threshold(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemovedModule {
    pub owner: String,
    pub module: usize,
    pub kind: FimKind,
    pub module_parameters: usize,
    /// Gate weight columns (and bias entries) dropped with it.
    pub gate_parameters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrimReport {
    pub removed: Vec<RemovedModule>,
    pub parameters_before: usize,
    pub parameters_after: usize,
}

/// Per module: the largest mean weight any gate gives it.
fn peak_weights(weights: &[GateWeights]) -> IndexMap<(usize, usize), f64> {
    let mut peak = IndexMap::new();
    for g in weights {
        for (c, w) in g.candidates.iter().zip(&g.mean_weights) {
            let e = peak.entry((c.set, c.module)).or_insert(f64::NEG_INFINITY);
            *e = f64::max(*e, *w);
        }
    }
    peak
}

impl<S: Scalar> ModelGraph<S> {
    fn removal_set(&self, rule: &TrimRule, weights: Option<&[GateWeights]>) -> Result<Vec<(usize, usize)>> {
        let owner_set = |owner: &str| {
            self.graph
                .sets
                .iter()
                .position(|s| s.owner.name() == owner)
                .ok_or_else(|| Error::Trim(format!("no module set owned by `{owner}`")))
        };
        let mut remove = Vec::new();
        match rule {
            TrimRule::Keep(keep) => {
                for (owner, idx) in keep {
                    let s = owner_set(owner)?;
                    let len = self.graph.sets[s].modules.len();
                    if let Some(bad) = idx.iter().find(|&&i| i >= len) {
                        return Err(Error::Trim(format!("set `{owner}` has no module {bad}")));
                    }
                    remove.extend((0..len).filter(|i| !idx.contains(i)).map(|i| (s, i)));
                }
            }
            TrimRule::Remove(list) => {
                for (owner, m) in list {
                    let s = owner_set(owner)?;
                    if *m >= self.graph.sets[s].modules.len() {
                        return Err(Error::Trim(format!("set `{owner}` has no module {m}")));
                    }
                    if !remove.contains(&(s, *m)) {
                        remove.push((s, *m));
                    }
                }
            }
            TrimRule::Threshold(t) => {
                let weights = weights.ok_or_else(|| Error::Trim("threshold trim needs gate weights".into()))?;
                for ((s, m), w) in peak_weights(weights) {
                    if w < *t {
                        remove.push((s, m));
                    }
                }
            }
        }
        remove.sort_unstable();
        Ok(remove)
    }

    /// Removes modules and the gate columns that read them; survivors keep their logits.
    pub fn trim(&self, rule: &TrimRule, weights: Option<&[GateWeights]>) -> Result<(ModelGraph<S>, TrimReport)> {
        let remove = self.removal_set(rule, weights)?;
        let before = self.parameter_count();
        let mut model = self.clone();
        let graph = &mut model.graph;

        for (s, set) in graph.sets.iter().enumerate() {
            let gone = remove.iter().filter(|r| r.0 == s).count();
            if gone == set.modules.len() && gone > 0 {
                return Err(Error::Trim(format!("trim would empty the `{}` module set", set.owner)));
            }
        }
        for task in &graph.tasks {
            for part in &task.inputs {
                if let TowerPart::Module { set, module } = part {
                    if remove.contains(&(*set, *module)) {
                        return Err(Error::Trim(format!("`{}` reads the module directly", task.name)));
                    }
                }
            }
        }

        let mut removed = Vec::new();
        for &(s, m) in &remove {
            let fim = graph.module(s, m);
            removed.push(RemovedModule {
                owner: graph.sets[s].owner.name().to_string(),
                module: m,
                kind: fim.kind(),
                module_parameters: fim.parameter_count(),
                gate_parameters: 0,
            });
            model.params.remove_prefix(&format!("{}.", fim.prefix));
        }

        for gate in &mut graph.gates {
            let drop: Vec<usize> = (0..gate.candidates.len())
                .filter(|&i| remove.contains(&(gate.candidates[i].set, gate.candidates[i].module)))
                .collect();
            if drop.is_empty() {
                continue;
            }
            if drop.len() == gate.candidates.len() {
                return Err(Error::Trim(format!("gate `{}` would lose every candidate", gate.prefix)));
            }
            let keep: Vec<usize> = (0..gate.candidates.len()).filter(|i| !drop.contains(i)).collect();
            let per_column = gate.selector_width + usize::from(gate.bias);
            for &i in &drop {
                let c = gate.candidates[i];
                let r = remove.iter().position(|r| *r == (c.set, c.module)).expect("listed");
                removed[r].gate_parameters += per_column;
            }
            for suffix in ["w", "b"] {
                if let Some(block) = model.params.get_mut(&format!("{}.{suffix}", gate.prefix)) {
                    *block = block.select(Axis(1), &keep);
                }
            }
            gate.candidates = keep.iter().map(|&i| gate.candidates[i]).collect();
        }

        // Renumber surviving modules inside their sets.
        for gate in &mut graph.gates {
            for c in &mut gate.candidates {
                c.module -= remove.iter().filter(|r| r.0 == c.set && r.1 < c.module).count();
            }
        }
        for (s, set) in graph.sets.iter_mut().enumerate() {
            let mut j = 0;
            set.modules.retain(|_| {
                let keep = !remove.contains(&(s, j));
                j += 1;
                keep
            });
        }
        graph.check_structure().map_err(|e| Error::Trim(e.to_string()))?;

        let after = model.parameter_count();
        debug_assert_eq!(after, model.graph.parameter_count());
        Ok((
            model,
            TrimReport {
                removed,
                parameters_before: before,
                parameters_after: after,
            },
        ))
    }
}
