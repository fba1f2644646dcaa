//! Binary cross-entropy shared by training and evaluation.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default probability clip.
pub const BCE_EPS: f64 = 1e-7;

/// Mean of `-y·ln p - (1-y)·ln(1-p)` with `p` clipped to `[eps, 1-eps]`.
///
/// Returns zero for an empty input.
pub fn bce_mean<S: Scalar>(pred: impl IntoIterator<Item = S>, labels: impl IntoIterator<Item = S>, eps: S) -> S {
    let one = S::one();
    let mut total = S::zero();
    let mut n = 0usize;
    for (p, y) in pred.into_iter().zip(labels) {
        let p = p.max(eps).min(one - eps);
        total -= y * p.ln() + (one - y) * (one - p).ln();
        n += 1;
    }
    if n == 0 {
        S::zero()
    } else {
        total / S::lit(n as f64)
    }
}

/// Weighted multi-task loss and its per-task parts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub components: Vec<f64>,
}

/// Accumulates `Σ w_k·c_k` in task order; shared by the tape and the reporting path.
pub fn weighted_total<S: Scalar>(components: &[S], weights: &[f64]) -> S {
    let mut total = S::zero();
    for (c, w) in components.iter().zip(weights) {
        total += S::lit(*w) * *c;
    }
    total
}

/// `Σ_k w_k · BCE(preds[:, k], labels[:, k])`.
pub fn compute_loss<S: Scalar>(preds: &Array2<S>, labels: &Array2<u8>, weights: &[f64]) -> Result<LossBreakdown> {
    if preds.dim() != labels.dim() {
        return Err(Error::Shape(format!(
            "predictions {:?} vs labels {:?}",
            preds.dim(),
            labels.dim()
        )));
    }
    if weights.len() != preds.ncols() {
        return Err(Error::Shape(format!("{} loss weights for {} tasks", weights.len(), preds.ncols())));
    }
    let eps = S::lit(BCE_EPS);
    let components: Vec<S> = (0..preds.ncols())
        .map(|k| {
            bce_mean(
                preds.column(k).iter().copied(),
                labels.column(k).iter().map(|&y| S::lit(f64::from(y))),
                eps,
            )
        })
        .collect();
    Ok(LossBreakdown {
        total: weighted_total(&components, weights).as_f64(),
        components: components.iter().map(|c| c.as_f64()).collect(),
    })
}
