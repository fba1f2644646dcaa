//! Central-difference verification of tape gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::trainer::record_loss;
use crate::data::ExampleBatch;
use crate::error::{Error, Result};
use crate::mtl::ModelGraph;
use crate::params::{Grads, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    /// Coordinates compared (all of them when the model has fewer).
    pub samples: usize,
    pub seed: u64,
    /// Denominator floor of the relative error, so gradients that vanish
    /// up to rounding are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            samples: 100,
            seed: 0,
            floor: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Worst {
    pub param: String,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because a ReLU or clip changed branch within ±ε.
    pub excluded_kinks: usize,
    pub worst: Option<Worst>,
}

/// Value, branch signature and (optionally) gradients of an objective.
pub struct Evaluation {
    pub value: f64,
    pub signature: u64,
    pub grads: Option<Grads<f64>>,
}

/// Evaluates a scalar objective recorded by `build` against `params`.
pub fn evaluate_tape(
    params: &ParamStore<f64>,
    with_grads: bool,
    build: impl FnOnce(&mut Tape<'_, f64>) -> Result<Var>,
) -> Result<Evaluation> {
    let mut tape = Tape::new(params);
    let root = build(&mut tape)?;
    let value = tape.value(root)[[0, 0]];
    if !value.is_finite() {
        return Err(Error::NonFinite {
            layer: "objective".into(),
            op: "gradient check",
        });
    }
    Ok(Evaluation {
        value,
        signature: tape.kink_signature(),
        grads: with_grads.then(|| tape.backward(root)),
    })
}

/// Compares analytic gradients with `(f(θ+ε) − f(θ−ε)) / 2ε` on sampled coordinates.
pub fn check_gradients<F>(params: &mut ParamStore<f64>, cfg: &GradCheckConfig, mut objective: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>, bool) -> Result<Evaluation>,
{
    let base = objective(params, true)?;
    let grads = base.grads.expect("requested gradients");
    let mut coords: Vec<(usize, usize, usize)> = Vec::new();
    for idx in 0..params.len() {
        let (r, c) = params.by_index(idx).dim();
        for i in 0..r {
            for j in 0..c {
                coords.push((idx, i, j));
            }
        }
    }
    coords.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        excluded_kinks: 0,
        worst: None,
    };
    for (idx, i, j) in coords {
        if report.checked >= cfg.samples {
            break;
        }
        let orig = params.by_index(idx)[[i, j]];
        params.by_index_mut(idx)[[i, j]] = orig + cfg.epsilon;
        let plus = objective(params, false);
        params.by_index_mut(idx)[[i, j]] = orig - cfg.epsilon;
        let minus = objective(params, false);
        params.by_index_mut(idx)[[i, j]] = orig;
        let (plus, minus) = (plus?, minus?);
        if plus.signature != base.signature || minus.signature != base.signature {
            report.excluded_kinks += 1;
            continue;
        }
        let numeric = (plus.value - minus.value) / (2.0 * cfg.epsilon);
        let analytic = grads.at(idx, i, j);
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(cfg.floor);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some(Worst {
                param: params.name_of(idx).to_string(),
                row: i,
                col: j,
                analytic,
                numeric,
            });
        }
    }
    Ok(report)
}

/// Gradient check of a model's unit-weighted training loss on one batch.
pub fn gradient_check(model: &ModelGraph<f64>, batch: &ExampleBatch, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let weights = vec![1.0; model.n_tasks()];
    let mut params = model.params.clone();
    check_gradients(&mut params, cfg, |p, with_grads| {
        evaluate_tape(p, with_grads, |tape| Ok(record_loss(model, tape, batch, &weights)?.0))
    })
}
