use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{closest, FimSpec};
use crate::error::{Error, Result};
use crate::params::{he_uniform, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

pub const DEFAULT_HIDDEN: usize = 256;

/// Feed-forward stack: ReLU between layers, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpLayout {
    /// Layer widths from input to output; a single entry means no layers.
    pub widths: Vec<usize>,
}

impl MlpLayout {
    pub(super) fn resolve(spec: &FimSpec, input_width: usize) -> Result<Self> {
        let hidden = match (&spec.hidden, spec.parameter_budget) {
            (Some(h), _) => h.clone(),
            (None, Some(budget)) => solve_hidden(input_width, spec.output_dim, budget),
            (None, None) => vec![DEFAULT_HIDDEN],
        };
        if hidden.contains(&0) {
            return Err(Error::Build("mlp hidden widths must be positive".into()));
        }
        let mut widths = vec![input_width];
        widths.extend(hidden);
        widths.push(spec.output_dim);
        Ok(Self { widths })
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn parameter_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub(super) fn init<S: Scalar>(&self, prefix: &str, store: &mut ParamStore<S>, rng: &mut ChaCha8Rng) -> Result<()> {
        for (i, w) in self.widths.windows(2).enumerate() {
            store.insert(format!("{prefix}.l{i}.w"), he_uniform(w[0], w[1], rng))?;
            store.insert(format!("{prefix}.l{i}.b"), ndarray::Array2::zeros((1, w[1])))?;
        }
        Ok(())
    }

    pub(super) fn forward<S: Scalar>(&self, prefix: &str, tape: &mut Tape<'_, S>, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers();
        for i in 0..last {
            h = tape.linear(h, &format!("{prefix}.l{i}.w"), &format!("{prefix}.l{i}.b"))?;
            if i + 1 < last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

/// One hidden layer sized so the total count lands nearest `budget`.
fn solve_hidden(input: usize, output: usize, budget: usize) -> Vec<usize> {
    let per_unit = input + 1 + output;
    let ideal = budget.saturating_sub(output) / per_unit;
    let count = |h: usize| input * h + h + h * output + output;
    let mut candidates = vec![(input * output + output, Vec::new())];
    for h in [ideal, ideal + 1] {
        if h > 0 {
            candidates.push((count(h), vec![h]));
        }
    }
    closest(budget, candidates).map(|(_, h)| h).unwrap_or_default()
}
