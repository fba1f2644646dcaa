//! Gated cross network: `c_{l+1} = c_0 ⊙ (W_c c_l + b_c) ⊙ σ(W_g c_l + b_g) + c_l`.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{closest, FimSpec};
use crate::error::{Error, Result};
use crate::params::{he_uniform, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdcnLayout {
    pub layers: usize,
    /// `W_c = U·V` with inner width `rank`; full matrix when `None`.
    pub rank: Option<usize>,
    /// Hidden width of a two-layer output projection; direct linear when `None`.
    pub projection_hidden: Option<usize>,
}

impl GdcnLayout {
    pub(super) fn resolve(spec: &FimSpec, width: usize) -> Result<Self> {
        if spec.cross_layers == 0 {
            return Err(Error::Build("gdcn needs at least one cross layer".into()));
        }
        if spec.rank == Some(0) {
            return Err(Error::Build("gdcn rank must be positive".into()));
        }
        let fixed = Self {
            layers: spec.cross_layers,
            rank: spec.rank,
            projection_hidden: None,
        };
        let Some(budget) = spec.parameter_budget else {
            return Ok(fixed);
        };
        if spec.rank.is_some() {
            return Ok(fixed);
        }
        let out = spec.output_dim;
        let layers = spec.cross_layers;
        let mut candidates = vec![(fixed.parameter_count(width, out), fixed.clone())];

        // Spend surplus on a hidden projection layer.
        let full_cross = layers * (2 * width * width + 2 * width);
        let h = budget.saturating_sub(full_cross + out) / (width + 1 + out);
        for h in [h, h + 1] {
            if h > 0 {
                let l = Self {
                    projection_hidden: Some(h),
                    ..fixed.clone()
                };
                candidates.push((l.parameter_count(width, out), l));
            }
        }
        // Or factorize the cross matrix to save parameters.
        let low_fixed = layers * (width * width + 3 * width) + width * out + out;
        let r = budget.saturating_sub(low_fixed) / (2 * width * layers);
        for r in [r, r + 1] {
            if r > 0 && 2 * r < width {
                let l = Self {
                    rank: Some(r),
                    ..fixed.clone()
                };
                candidates.push((l.parameter_count(width, out), l));
            }
        }
        Ok(closest(budget, candidates).map(|(_, l)| l).unwrap_or(fixed))
    }

    pub fn parameter_count(&self, width: usize, out: usize) -> usize {
        let cross = match self.rank {
            Some(r) => 2 * width * r,
            None => width * width,
        };
        let per_layer = cross + width + width * width + width;
        let projection = match self.projection_hidden {
            Some(h) => width * h + h + h * out + out,
            None => width * out + out,
        };
        self.layers * per_layer + projection
    }

    pub(super) fn init<S: Scalar>(
        &self,
        prefix: &str,
        width: usize,
        out: usize,
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        for l in 0..self.layers {
            match self.rank {
                Some(r) => {
                    store.insert(format!("{prefix}.x{l}.u"), he_uniform(width, r, rng))?;
                    store.insert(format!("{prefix}.x{l}.v"), he_uniform(r, width, rng))?;
                }
                None => {
                    store.insert(format!("{prefix}.x{l}.wc"), he_uniform(width, width, rng))?;
                }
            }
            store.insert(format!("{prefix}.x{l}.bc"), Array2::zeros((1, width)))?;
            store.insert(format!("{prefix}.x{l}.wg"), he_uniform(width, width, rng))?;
            store.insert(format!("{prefix}.x{l}.bg"), Array2::zeros((1, width)))?;
        }
        match self.projection_hidden {
            Some(h) => {
                store.insert(format!("{prefix}.proj0.w"), he_uniform(width, h, rng))?;
                store.insert(format!("{prefix}.proj0.b"), Array2::zeros((1, h)))?;
                store.insert(format!("{prefix}.proj1.w"), he_uniform(h, out, rng))?;
                store.insert(format!("{prefix}.proj1.b"), Array2::zeros((1, out)))?;
            }
            None => {
                store.insert(format!("{prefix}.proj.w"), he_uniform(width, out, rng))?;
                store.insert(format!("{prefix}.proj.b"), Array2::zeros((1, out)))?;
            }
        }
        Ok(())
    }

    pub(super) fn forward<S: Scalar>(&self, prefix: &str, tape: &mut Tape<'_, S>, x: Var) -> Result<Var> {
        let c0 = x;
        let mut c = x;
        for l in 0..self.layers {
            let cross = match self.rank {
                Some(_) => {
                    let u = tape.param(&format!("{prefix}.x{l}.u"))?;
                    let v = tape.param(&format!("{prefix}.x{l}.v"))?;
                    let low = tape.matmul(c, u);
                    tape.matmul(low, v)
                }
                None => {
                    let w = tape.param(&format!("{prefix}.x{l}.wc"))?;
                    tape.matmul(c, w)
                }
            };
            let bc = tape.param(&format!("{prefix}.x{l}.bc"))?;
            let cross = tape.add_bias(cross, bc);
            let gate = tape.linear(c, &format!("{prefix}.x{l}.wg"), &format!("{prefix}.x{l}.bg"))?;
            let gate = tape.sigmoid(gate);
            let term = tape.mul(c0, cross);
            let term = tape.mul(term, gate);
            c = tape.add(term, c);
        }
        match self.projection_hidden {
            Some(_) => {
                let h = tape.linear(c, &format!("{prefix}.proj0.w"), &format!("{prefix}.proj0.b"))?;
                let h = tape.relu(h);
                tape.linear(h, &format!("{prefix}.proj1.w"), &format!("{prefix}.proj1.b"))
            }
            None => tape.linear(c, &format!("{prefix}.proj.w"), &format!("{prefix}.proj.b")),
        }
    }
}
