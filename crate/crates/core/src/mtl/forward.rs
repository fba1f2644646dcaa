use ndarray::{Array2, Axis};
use rayon::prelude::*;

use super::graph::{ModelGraph, TowerPart};
use crate::data::{Column, Dataset, ExampleBatch};
use crate::error::{Error, Result};
use crate::interactions::FimInput;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Test and analysis hooks for a forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardOptions {
    /// Per task: a constant replacing that task's prediction wherever it scales
    /// another task's candidates. The task's own output is unaffected.
    pub pred_override: Vec<Option<f64>>,
}

impl ForwardOptions {
    pub fn override_pred(mut self, task: usize, value: f64) -> Self {
        if self.pred_override.len() <= task {
            self.pred_override.resize(task + 1, None);
        }
        self.pred_override[task] = Some(value);
        self
    }
}

/// Tape handles of every intermediate a caller may inspect.
#[derive(Debug, Clone)]
pub struct Pass {
    pub x: Var,
    pub stack: Option<Var>,
    /// `modules[set][module]`.
    pub modules: Vec<Vec<Var>>,
    /// Softmax weights per gate, `[n × candidates]`.
    pub gate_weights: Vec<Var>,
    /// Gate-weighted sums, `[n × output_dim]`.
    pub gate_outputs: Vec<Var>,
    /// Tower inputs per task.
    pub tower_inputs: Vec<Var>,
    /// Probabilities per task, `[n × 1]`.
    pub preds: Vec<Var>,
}

/// Concrete values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput<S> {
    /// `[n × tasks]` probabilities.
    pub preds: Array2<S>,
    pub gate_weights: Vec<Array2<S>>,
    pub gate_outputs: Vec<Array2<S>>,
    pub tower_inputs: Vec<Array2<S>>,
    pub modules: Vec<Vec<Array2<S>>>,
}

/// Softmax gate over `candidates`: returns (weights, weighted sum).
///
/// `logits = selector·w (+ b)`; the sum accumulates candidates in order.
pub fn gate_mix<S: Scalar>(
    tape: &mut Tape<'_, S>,
    w: Var,
    b: Option<Var>,
    selector: Var,
    candidates: &[Var],
) -> Result<(Var, Var)> {
    let (_, k) = tape.shape(w);
    if k != candidates.len() {
        return Err(Error::Shape(format!("gate has {k} logits for {} candidates", candidates.len())));
    }
    if tape.shape(selector).1 != tape.shape(w).0 {
        return Err(Error::Shape(format!(
            "gate expects selector width {}, got {}",
            tape.shape(w).0,
            tape.shape(selector).1
        )));
    }
    let width = tape.shape(candidates[0]).1;
    if candidates.iter().any(|c| tape.shape(*c).1 != width) {
        return Err(Error::Shape("gate candidates differ in width".into()));
    }
    let mut logits = tape.matmul(selector, w);
    if let Some(b) = b {
        logits = tape.add_bias(logits, b);
    }
    let weights = tape.softmax(logits);
    let mut sum = None;
    for (i, c) in candidates.iter().enumerate() {
        let wi = tape.slice_cols(weights, i, 1);
        let term = tape.scale_rows(*c, wi);
        sum = Some(match sum {
            None => term,
            Some(s) => tape.add(s, term),
        });
    }
    Ok((weights, sum.expect("at least one candidate")))
}

/// Standalone gate evaluation on concrete arrays.
pub fn gate_forward<S: Scalar>(
    w: &Array2<S>,
    b: Option<&Array2<S>>,
    selector: &Array2<S>,
    candidates: &[Array2<S>],
) -> Result<(Array2<S>, Array2<S>)> {
    if candidates.is_empty() {
        return Err(Error::Shape("gate needs at least one candidate".into()));
    }
    let mut store = ParamStore::new();
    store.insert("w", w.clone())?;
    if let Some(b) = b {
        store.insert("b", b.clone())?;
    }
    let mut tape = Tape::new(&store);
    let wv = tape.param("w")?;
    let bv = b.map(|_| tape.param("b")).transpose()?;
    let sel = tape.input(selector.clone());
    let cands: Vec<Var> = candidates.iter().map(|c| tape.input(c.clone())).collect();
    let (weights, sum) = gate_mix(&mut tape, wv, bv, sel, &cands)?;
    Ok((tape.value(weights).clone(), tape.value(sum).clone()))
}

impl<S: Scalar> ModelGraph<S> {
    /// Concatenated input representation `x` of a batch.
    pub fn embed(&self, tape: &mut Tape<'_, S>, batch: &ExampleBatch) -> Result<Var> {
        tape.scoped("embedding", |tape| {
            let n = batch.len();
            let mut parts = Vec::with_capacity(self.graph.embeddings.len());
            for (f, e) in self.graph.embeddings.iter().enumerate() {
                let table = tape.param(&e.prefix)?;
                let part = match self.column(f) {
                    Column::Categorical(pos) => {
                        let ids = batch.categorical_ids.column(pos).to_vec();
                        if let Some(bad) = ids.iter().find(|&&id| id >= e.rows) {
                            return Err(Error::Shape(format!("id {bad} out of range for `{}`", e.feature)));
                        }
                        tape.gather(table, ids)
                    }
                    Column::Continuous(pos) => {
                        let col = batch.continuous_values.column(pos).mapv(S::lit);
                        let xv = tape.input(col.into_shape_with_order((n, 1)).expect("column shape"));
                        tape.matmul(xv, table)
                    }
                };
                parts.push(part);
            }
            Ok(tape.concat(&parts))
        })
    }

    /// Records the full model on `tape`.
    pub fn forward_pass(&self, tape: &mut Tape<'_, S>, batch: &ExampleBatch, opts: &ForwardOptions) -> Result<Pass> {
        batch.validate(&self.schema)?;
        let n = batch.len();
        let x = self.embed(tape, batch)?;
        let ids = &batch.categorical_ids;
        let stack = match &self.graph.stack {
            Some(fim) => Some(fim.forward(tape, &FimInput { x, categorical_ids: ids })?),
            None => None,
        };
        let expert_in = stack.unwrap_or(x);
        let mut modules = Vec::with_capacity(self.graph.sets.len());
        for set in &self.graph.sets {
            let outs = set
                .modules
                .iter()
                .map(|m| m.forward(tape, &FimInput { x: expert_in, categorical_ids: ids }))
                .collect::<Result<Vec<_>>>()?;
            modules.push(outs);
        }

        let mut gate_weights = vec![None; self.graph.gates.len()];
        let mut gate_outputs = vec![None; self.graph.gates.len()];
        let mut preds: Vec<Var> = Vec::with_capacity(self.graph.tasks.len());
        let mut tower_inputs = Vec::with_capacity(self.graph.tasks.len());
        for (t, task) in self.graph.tasks.iter().enumerate() {
            let mut parts = Vec::with_capacity(task.inputs.len());
            for part in &task.inputs {
                match *part {
                    TowerPart::Module { set, module } => parts.push(modules[set][module]),
                    TowerPart::Gate(g) => {
                        let gate = &self.graph.gates[g];
                        let out = tape.scoped(&gate.prefix, |tape| -> Result<_> {
                            let mut cands = Vec::with_capacity(gate.candidates.len());
                            for c in &gate.candidates {
                                let v = modules[c.set][c.module];
                                cands.push(match c.scaled_by {
                                    None => v,
                                    Some(s) => {
                                        let factor = match opts.pred_override.get(s).copied().flatten() {
                                            Some(k) => tape.input(Array2::from_elem((n, 1), S::lit(k))),
                                            None if task.tsn.detach => tape.detach(preds[s]),
                                            None => preds[s],
                                        };
                                        tape.scale_rows(v, factor)
                                    }
                                });
                            }
                            let w = tape.param(&format!("{}.w", gate.prefix))?;
                            let b = if gate.bias {
                                Some(tape.param(&format!("{}.b", gate.prefix))?)
                            } else {
                                None
                            };
                            gate_mix(tape, w, b, expert_in, &cands)
                        })?;
                        gate_weights[g] = Some(out.0);
                        gate_outputs[g] = Some(out.1);
                        parts.push(out.1);
                    }
                }
            }
            let input = tape.concat(&parts);
            tower_inputs.push(input);
            let logit = task.tower.forward(tape, &FimInput { x: input, categorical_ids: ids })?;
            let pred = tape.scoped(&task.tower.prefix, |tape| tape.sigmoid(logit));
            preds.push(pred);
            debug_assert_eq!(t + 1, preds.len());
        }
        tape.check_finite()?;
        Ok(Pass {
            x,
            stack,
            modules,
            gate_weights: gate_weights.into_iter().map(|g| g.expect("every gate is used")).collect(),
            gate_outputs: gate_outputs.into_iter().map(|g| g.expect("every gate is used")).collect(),
            tower_inputs,
            preds,
        })
    }

    /// Per-task probabilities `[n × tasks]`.
    pub fn forward(&self, batch: &ExampleBatch) -> Result<Array2<S>> {
        Ok(self.forward_with(batch, &ForwardOptions::default())?.preds)
    }

    pub fn forward_with(&self, batch: &ExampleBatch, opts: &ForwardOptions) -> Result<ForwardOutput<S>> {
        let mut tape = Tape::new(&self.params);
        let pass = self.forward_pass(&mut tape, batch, opts)?;
        let values = |vs: &[Var]| vs.iter().map(|v| tape.value(*v).clone()).collect::<Vec<_>>();
        let cols: Vec<_> = pass.preds.iter().map(|p| tape.value(*p).view()).collect();
        let preds = if cols.is_empty() {
            Array2::zeros((batch.len(), 0))
        } else {
            ndarray::concatenate(Axis(1), &cols).expect("prediction columns")
        };
        Ok(ForwardOutput {
            preds,
            gate_weights: values(&pass.gate_weights),
            gate_outputs: values(&pass.gate_outputs),
            tower_inputs: values(&pass.tower_inputs),
            modules: pass.modules.iter().map(|m| values(m)).collect(),
        })
    }

    /// Probabilities for every row of `data`, evaluated batch by batch in parallel.
    pub fn predict(&self, data: &Dataset, batch_size: usize) -> Result<Array2<S>> {
        let batches: Vec<ExampleBatch> = data.batches(batch_size, false, 0)?.collect();
        if batches.is_empty() {
            return Ok(Array2::zeros((0, self.n_tasks())));
        }
        let outs = batches
            .par_iter()
            .map(|b| self.forward(b))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
        Ok(ndarray::concatenate(Axis(0), &views).expect("prediction rows"))
    }
}
