//! Single serial mask block.
//!
//! `mask = W₂·ReLU(W₁x + b₁) + b₂`, `h = LN(W_h x + b_h)·γ + β`,
//! `out = W_o·ReLU(h ⊙ mask) + b_o`.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{closest, FimSpec, DEFAULT_MASK_HIDDEN};
use crate::error::{Error, Result};
use crate::params::{he_uniform, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskNetLayout {
    /// Width of the hidden representation and of the mask.
    pub hidden: usize,
    /// Width of the mask generator's first layer.
    pub bottleneck: usize,
}

fn default_bottleneck(hidden: usize) -> usize {
    hidden.div_ceil(4).max(1)
}

impl MaskNetLayout {
    pub(super) fn resolve(spec: &FimSpec, width: usize) -> Result<Self> {
        if spec.mask_hidden == Some(0) || spec.mask_bottleneck == Some(0) {
            return Err(Error::Build("masknet widths must be positive".into()));
        }
        let out = spec.output_dim;
        let layout = match (spec.parameter_budget, spec.mask_hidden, spec.mask_bottleneck) {
            (None, hidden, bottleneck) => {
                let hidden = hidden.unwrap_or(DEFAULT_MASK_HIDDEN);
                Self {
                    hidden,
                    bottleneck: bottleneck.unwrap_or_else(|| default_bottleneck(hidden)),
                }
            }
            (Some(_), Some(hidden), Some(bottleneck)) => Self { hidden, bottleneck },
            (Some(budget), Some(hidden), None) => {
                // count = width·b + b + b·H + H + rest  →  solve for b
                let rest = Self { hidden, bottleneck: 0 }.parameter_count(width, out);
                let b = budget.saturating_sub(rest) / (width + 1 + hidden);
                let candidates = [b, b + 1].into_iter().filter(|b| *b > 0).map(|b| {
                    let l = Self { hidden, bottleneck: b };
                    (l.parameter_count(width, out), l)
                });
                closest(budget, candidates)
                    .map(|(_, l)| l)
                    .unwrap_or(Self { hidden, bottleneck: 1 })
            }
            (Some(budget), None, fixed_bottleneck) => {
                let layout = |h: usize| Self {
                    hidden: h,
                    bottleneck: fixed_bottleneck.unwrap_or_else(|| default_bottleneck(h)),
                };
                // Count grows monotonically with the hidden width: bisect.
                let (mut lo, mut hi) = (1usize, 1usize);
                while layout(hi).parameter_count(width, out) < budget && hi < 1 << 20 {
                    hi *= 2;
                }
                while lo < hi {
                    let mid = (lo + hi) / 2;
                    if layout(mid).parameter_count(width, out) < budget {
                        lo = mid + 1;
                    } else {
                        hi = mid;
                    }
                }
                let candidates = [lo.saturating_sub(1).max(1), lo].map(|h| (layout(h).parameter_count(width, out), layout(h)));
                closest(budget, candidates).map(|(_, l)| l).unwrap_or(layout(1))
            }
        };
        Ok(layout)
    }

    pub fn parameter_count(&self, width: usize, out: usize) -> usize {
        let (h, b) = (self.hidden, self.bottleneck);
        let mask = width * b + b + b * h + h;
        let hidden = width * h + h + 2 * h;
        let output = h * out + out;
        mask + hidden + output
    }

    pub(super) fn init<S: Scalar>(
        &self,
        prefix: &str,
        width: usize,
        out: usize,
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let (h, b) = (self.hidden, self.bottleneck);
        store.insert(format!("{prefix}.mask0.w"), he_uniform(width, b, rng))?;
        store.insert(format!("{prefix}.mask0.b"), Array2::zeros((1, b)))?;
        store.insert(format!("{prefix}.mask1.w"), he_uniform(b, h, rng))?;
        store.insert(format!("{prefix}.mask1.b"), Array2::zeros((1, h)))?;
        store.insert(format!("{prefix}.hidden.w"), he_uniform(width, h, rng))?;
        store.insert(format!("{prefix}.hidden.b"), Array2::zeros((1, h)))?;
        store.insert(format!("{prefix}.ln.gamma"), Array2::ones((1, h)))?;
        store.insert(format!("{prefix}.ln.beta"), Array2::zeros((1, h)))?;
        store.insert(format!("{prefix}.out.w"), he_uniform(h, out, rng))?;
        store.insert(format!("{prefix}.out.b"), Array2::zeros((1, out)))?;
        Ok(())
    }

    pub(super) fn forward<S: Scalar>(&self, prefix: &str, tape: &mut Tape<'_, S>, x: Var) -> Result<Var> {
        let m = tape.linear(x, &format!("{prefix}.mask0.w"), &format!("{prefix}.mask0.b"))?;
        let m = tape.relu(m);
        let mask = tape.linear(m, &format!("{prefix}.mask1.w"), &format!("{prefix}.mask1.b"))?;

        let h = tape.linear(x, &format!("{prefix}.hidden.w"), &format!("{prefix}.hidden.b"))?;
        let h = tape.layer_norm(h, S::lit(LAYER_NORM_EPS));
        let gamma = tape.param(&format!("{prefix}.ln.gamma"))?;
        let beta = tape.param(&format!("{prefix}.ln.beta"))?;
        let h = tape.scale_cols(h, gamma);
        let h = tape.add_bias(h, beta);

        let z = tape.mul(h, mask);
        let z = tape.relu(z);
        tape.linear(z, &format!("{prefix}.out.w"), &format!("{prefix}.out.b"))
    }
}
