//! Hash-codebook memorization of second-order categorical crosses.
//!
//! Each selected field pair `(a, b)` with ids `(i, j)` is hashed twice into two
//! shared codebooks; the two code vectors are summed, the per-pair codes are
//! laid side by side and projected to the output width.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FimSpec, DEFAULT_MEMONET_FIELDS};
use crate::data::{Column, FeatureSchema};
use crate::error::{Error, Result};
use crate::params::{he_uniform, normal, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

pub const CODEBOOK_INIT_STD: f64 = 0.01;

const HASH_A1: u64 = 0x9E37_79B9_7F4A_7C15;
const HASH_B1: u64 = 0x632B_E59B_D9B4_E019;
const HASH_A2: u64 = 0xC2B2_AE3D_27D4_EB4F;
const HASH_B2: u64 = 0x1656_67B1_9E37_79F9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoNetLayout {
    /// Crossed pairs as positions in the categorical id matrix.
    pub pairs: Vec<(usize, usize)>,
    /// Names of the crossed pairs, for reporting.
    pub pair_names: Vec<(String, String)>,
    pub codebook_size: usize,
    pub code_dim: usize,
}

/// Mixes a pair index and two ids into one key.
pub fn pair_key(pair: usize, a: usize, b: usize) -> u64 {
    let mut k = (pair as u64).wrapping_mul(0x1000_0000_01B3) ^ (a as u64);
    k = k.wrapping_mul(0x1000_0000_01B3) ^ (b as u64).rotate_left(29);
    k
}

/// Slots of `key` in the two codebooks.
pub fn hash_slots(key: u64, size: usize) -> (usize, usize) {
    let h1 = HASH_A1.wrapping_mul(key).wrapping_add(HASH_B1) >> 32;
    let h2 = HASH_A2.wrapping_mul(key).wrapping_add(HASH_B2) >> 32;
    ((h1 % size as u64) as usize, (h2 % size as u64) as usize)
}

fn categorical_position(schema: &FeatureSchema, name: &str) -> Result<usize> {
    let idx = schema
        .feature_index(name)
        .ok_or_else(|| Error::UnknownFeature(name.to_string()))?;
    match schema.column(idx) {
        Column::Categorical(pos) => Ok(pos),
        Column::Continuous(_) => Err(Error::Build(format!("memonet field `{name}` is not categorical"))),
    }
}

impl MemoNetLayout {
    pub(super) fn resolve(spec: &FimSpec, schema: &FeatureSchema) -> Result<Self> {
        if spec.code_dim == 0 {
            return Err(Error::Build("memonet code_dim must be positive".into()));
        }
        let pair_names: Vec<(String, String)> = match (&spec.pairs, &spec.fields) {
            (Some(pairs), _) => pairs.iter().map(|[a, b]| (a.clone(), b.clone())).collect(),
            (None, fields) => {
                let fields: Vec<String> = match fields {
                    Some(f) => f.clone(),
                    None => {
                        // Highest-cardinality fields, schema order breaking ties.
                        let mut cats: Vec<(usize, &str)> = schema
                            .categorical_features()
                            .map(|f| (f.vocab_size().unwrap_or(0), f.name.as_str()))
                            .collect();
                        cats.sort_by(|x, y| y.0.cmp(&x.0));
                        cats.truncate(DEFAULT_MEMONET_FIELDS);
                        let keep: Vec<&str> = cats.iter().map(|c| c.1).collect();
                        schema
                            .categorical_features()
                            .filter(|f| keep.contains(&f.name.as_str()))
                            .map(|f| f.name.clone())
                            .collect()
                    }
                };
                let mut out = Vec::new();
                for i in 0..fields.len() {
                    for j in i + 1..fields.len() {
                        out.push((fields[i].clone(), fields[j].clone()));
                    }
                }
                out
            }
        };
        if pair_names.is_empty() {
            return Err(Error::Build("memonet needs at least one categorical field pair".into()));
        }
        let pairs = pair_names
            .iter()
            .map(|(a, b)| Ok((categorical_position(schema, a)?, categorical_position(schema, b)?)))
            .collect::<Result<Vec<_>>>()?;

        let mut layout = Self {
            pairs,
            pair_names,
            codebook_size: spec.codebook_size,
            code_dim: spec.code_dim,
        };
        if let Some(budget) = spec.parameter_budget {
            // count = 2·size·cd + P·cd·out + out  →  solve for size
            let fixed = layout.parameter_count_with(0, spec.output_dim);
            let size = budget.saturating_sub(fixed) as f64 / (2 * layout.code_dim) as f64;
            layout.codebook_size = (size.round() as usize).max(1);
        }
        if layout.codebook_size == 0 {
            return Err(Error::Build("memonet codebook_size must be positive".into()));
        }
        Ok(layout)
    }

    fn parameter_count_with(&self, size: usize, out: usize) -> usize {
        2 * size * self.code_dim + self.pairs.len() * self.code_dim * out + out
    }

    pub fn parameter_count(&self, out: usize) -> usize {
        self.parameter_count_with(self.codebook_size, out)
    }

    /// Codebook slots used by every pair of every row, row-major.
    pub fn slots(&self, ids: &Array2<usize>) -> (Vec<usize>, Vec<usize>) {
        let mut s1 = Vec::with_capacity(ids.nrows() * self.pairs.len());
        let mut s2 = Vec::with_capacity(ids.nrows() * self.pairs.len());
        for row in ids.rows() {
            for (p, &(a, b)) in self.pairs.iter().enumerate() {
                let (x, y) = hash_slots(pair_key(p, row[a], row[b]), self.codebook_size);
                s1.push(x);
                s2.push(y);
            }
        }
        (s1, s2)
    }

    pub(super) fn init<S: Scalar>(
        &self,
        prefix: &str,
        out: usize,
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let (size, cd) = (self.codebook_size, self.code_dim);
        store.insert(format!("{prefix}.cb1"), normal(size, cd, CODEBOOK_INIT_STD, rng))?;
        store.insert(format!("{prefix}.cb2"), normal(size, cd, CODEBOOK_INIT_STD, rng))?;
        let width = self.pairs.len() * cd;
        store.insert(format!("{prefix}.proj.w"), he_uniform(width, out, rng))?;
        store.insert(format!("{prefix}.proj.b"), Array2::zeros((1, out)))?;
        Ok(())
    }

    pub(super) fn forward<S: Scalar>(&self, prefix: &str, tape: &mut Tape<'_, S>, ids: &Array2<usize>) -> Result<Var> {
        let width = self.pairs.iter().map(|&(a, b)| a.max(b)).max().unwrap_or(0);
        if ids.ncols() <= width {
            return Err(Error::Shape(format!(
                "memonet `{prefix}` reads categorical column {width}, batch has {}",
                ids.ncols()
            )));
        }
        let (s1, s2) = self.slots(ids);
        let cb1 = tape.param(&format!("{prefix}.cb1"))?;
        let cb2 = tape.param(&format!("{prefix}.cb2"))?;
        let c1 = tape.gather_concat(cb1, s1, self.pairs.len());
        let c2 = tape.gather_concat(cb2, s2, self.pairs.len());
        let codes = tape.add(c1, c2);
        tape.linear(codes, &format!("{prefix}.proj.w"), &format!("{prefix}.proj.b"))
    }
}
