use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::loss::{weighted_total, LossBreakdown, BCE_EPS};
use crate::data::{Dataset, ExampleBatch};
use crate::error::{Error, Result};
use crate::evaluation::metrics::{auc, logloss};
use crate::mtl::{ForwardOptions, ModelGraph};
use crate::params::Grads;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    /// Maximum number of epochs.
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    /// Epochs without eval-AUC improvement before stopping; `None` disables early stopping.
    #[serde(default = "d_patience")]
    pub patience: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub adam_epsilon: f64,
    /// Per-task loss weights; all 1 when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_weights: Option<Vec<f64>>,
    /// Global gradient-norm clip.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    #[serde(default = "d_eval_batch")]
    pub eval_batch_size: usize,
}

fn d_lr() -> f64 {
    1e-3
}
fn d_batch() -> usize {
    2048
}
fn d_epochs() -> usize {
    20
}
fn d_patience() -> Option<usize> {
    Some(3)
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}
fn d_eval_batch() -> usize {
    4096
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: d_lr(),
            batch_size: d_batch(),
            epochs: d_epochs(),
            patience: d_patience(),
            seed: 0,
            beta1: d_beta1(),
            beta2: d_beta2(),
            adam_epsilon: d_eps(),
            loss_weights: None,
            grad_clip: None,
            eval_batch_size: d_eval_batch(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_tasks: usize) -> Result<()> {
        let bad = |m: String| Err(Error::TrainConfig(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam decay rates must lie in [0, 1)".into());
        }
        if self.adam_epsilon <= 0.0 {
            return bad("adam_epsilon must be positive".into());
        }
        if let Some(w) = &self.loss_weights {
            if w.len() != n_tasks {
                return bad(format!("{} loss weights for {n_tasks} tasks", w.len()));
            }
            if w.iter().any(|x| !(*x >= 0.0 && x.is_finite())) || w.iter().all(|x| *x == 0.0) {
                return bad("loss weights must be non-negative with at least one positive".into());
            }
        }
        if self.grad_clip.is_some_and(|c| c <= 0.0) {
            return bad("grad_clip must be positive".into());
        }
        Ok(())
    }

    pub fn weights(&self, n_tasks: usize) -> Vec<f64> {
        self.loss_weights.clone().unwrap_or_else(|| vec![1.0; n_tasks])
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub task_loss: Vec<f64>,
    /// `None` where a task's eval labels are single-class.
    pub eval_auc: Vec<Option<f64>>,
    pub eval_logloss: Vec<f64>,
    pub wall_time_s: f64,
}

impl EpochRecord {
    pub fn mean_auc(&self) -> Option<f64> {
        let v: Vec<f64> = self.eval_auc.iter().flatten().copied().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrainStatus {
    Completed,
    EarlyStopped { epoch: usize },
    Aborted { epoch: usize, reason: String },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S: Scalar> {
    /// Parameters of the best epoch (or the last good state after an abort).
    pub model: ModelGraph<S>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub status: TrainStatus,
}

/// Records the weighted multi-task loss of `batch` on `tape`; returns the total and per-task values.
pub fn record_loss<'p, S: Scalar>(
    model: &ModelGraph<S>,
    tape: &mut Tape<'p, S>,
    batch: &ExampleBatch,
    weights: &[f64],
) -> Result<(Var, Vec<S>)> {
    let pass = model.forward_pass(tape, batch, &ForwardOptions::default())?;
    let eps = S::lit(BCE_EPS);
    let mut comps = Vec::with_capacity(pass.preds.len());
    let mut total = None;
    for (k, &pred) in pass.preds.iter().enumerate() {
        let labels: Vec<S> = batch.labels.column(k).iter().map(|&y| S::lit(f64::from(y))).collect();
        let l = tape.bce(pred, &labels, eps);
        comps.push(tape.value(l)[[0, 0]]);
        let term = tape.scale(l, S::lit(weights[k]));
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term),
        });
    }
    let total = total.ok_or_else(|| Error::Build("model has no tasks".into()))?;
    debug_assert_eq!(tape.value(total)[[0, 0]], weighted_total(&comps, weights));
    if !tape.value(total)[[0, 0]].is_finite() {
        return Err(Error::NonFinite {
            layer: "loss".into(),
            op: "bce",
        });
    }
    Ok((total, comps))
}

/// Loss of one batch and its gradients.
pub fn loss_and_grads<S: Scalar>(
    model: &ModelGraph<S>,
    batch: &ExampleBatch,
    weights: &[f64],
) -> Result<(LossBreakdown, Grads<S>)> {
    let mut tape = Tape::new(&model.params);
    let (total, comps) = record_loss(model, &mut tape, batch, weights)?;
    let grads = tape.backward(total);
    Ok((
        LossBreakdown {
            total: tape.value(total)[[0, 0]].as_f64(),
            components: comps.iter().map(|c| c.as_f64()).collect(),
        },
        grads,
    ))
}

/// Eval AUC (per task) and logloss of `model` on `data`.
pub fn evaluate<S: Scalar>(model: &ModelGraph<S>, data: &Dataset, batch_size: usize) -> Result<(Vec<Option<f64>>, Vec<f64>)> {
    let preds = model.predict(data, batch_size)?;
    let mut aucs = Vec::new();
    let mut lls = Vec::new();
    for k in 0..model.n_tasks() {
        let scores: Vec<f64> = preds.column(k).iter().map(|v| v.as_f64()).collect();
        let labels = data.labels(k);
        aucs.push(auc(&scores, &labels).ok());
        lls.push(logloss(&scores, &labels));
    }
    Ok((aucs, lls))
}

/// Trains with Adam, keeping the parameters of the best epoch by mean eval AUC.
pub fn train<S: Scalar>(
    model: ModelGraph<S>,
    train_data: &Dataset,
    eval_data: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome<S>> {
    train_logged(model, train_data, eval_data, config, None)
}

/// [`train`], appending one JSON line per epoch to `history_path`.
pub fn train_logged<S: Scalar>(
    mut model: ModelGraph<S>,
    train_data: &Dataset,
    eval_data: &Dataset,
    config: &TrainConfig,
    history_path: Option<&Path>,
) -> Result<TrainOutcome<S>> {
    let n_tasks = model.n_tasks();
    config.validate(n_tasks)?;
    if train_data.schema().tasks != model.schema.tasks {
        return Err(Error::Schema("training data tasks differ from the model's".into()));
    }
    let weights = config.weights(n_tasks);
    let mut adam = Adam::new(config.adam(), &model.params);
    let mut log = match history_path {
        Some(p) => Some(std::fs::File::create(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelGraph<S>)> = None;
    let mut status = TrainStatus::Completed;
    let start = Instant::now();

    'epochs: for epoch in 0..config.epochs {
        let before_epoch = model.params.clone();
        let mut sums = vec![0.0; n_tasks];
        let mut total = 0.0;
        let mut seen = 0usize;
        for batch in train_data.batches(config.batch_size, true, config.seed.wrapping_add(epoch as u64))? {
            let step = loss_and_grads(&model, &batch, &weights).and_then(|(loss, mut grads)| {
                if let Some(c) = config.grad_clip {
                    let norm = grads.global_norm();
                    if norm > S::lit(c) {
                        grads.scale(S::lit(c) / norm);
                    }
                }
                adam.update(&mut model.params, &grads);
                if model.params.all_finite() {
                    Ok(loss)
                } else {
                    Err(Error::NonFinite {
                        layer: "parameters".into(),
                        op: "adam",
                    })
                }
            });
            let loss = match step {
                Ok(l) => l,
                Err(e @ Error::NonFinite { .. }) => {
                    model.params = before_epoch;
                    status = TrainStatus::Aborted {
                        epoch,
                        reason: e.to_string(),
                    };
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            let n = batch.len() as f64;
            for (s, c) in sums.iter_mut().zip(&loss.components) {
                *s += c * n;
            }
            total += loss.total * n;
            seen += batch.len();
        }
        let seen = seen.max(1) as f64;
        let (eval_auc, eval_logloss) = evaluate(&model, eval_data, config.eval_batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: total / seen,
            task_loss: sums.iter().map(|s| s / seen).collect(),
            eval_auc,
            eval_logloss,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        if let Some(f) = log.as_mut() {
            let line = serde_json::to_string(&record).map_err(|e| Error::Other(e.to_string()))?;
            writeln!(f, "{line}").map_err(|e| Error::io(history_path.expect("log path"), e))?;
        }
        let score = record.mean_auc().unwrap_or(-record.train_loss);
        history.push(record);
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, epoch, model.clone()));
        }
        if let (Some(p), Some((_, b, _))) = (config.patience, &best) {
            if epoch - b >= p {
                status = TrainStatus::EarlyStopped { epoch };
                break;
            }
        }
    }

    let (model, best_epoch) = match best {
        Some((_, e, m)) => (m, Some(e)),
        None => (model, None),
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        status,
    })
}
