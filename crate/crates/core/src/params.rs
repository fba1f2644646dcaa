//! Named parameter blocks and their gradients.

use indexmap::IndexMap;
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ordered collection of named 2-D parameter blocks.
///
/// Vectors (biases, layer-norm gains) are stored as `[1 × m]` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S> {
    blocks: IndexMap<String, Array2<S>>,
}

impl<S> Default for ParamStore<S> {
    fn default() -> Self {
        Self {
            blocks: IndexMap::new(),
        }
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<S>) -> Result<usize> {
        let name = name.into();
        if self.blocks.contains_key(&name) {
            return Err(Error::Build(format!("duplicate parameter block `{name}`")));
        }
        let (idx, _) = self.blocks.insert_full(name, value);
        Ok(idx)
    }

    pub fn get(&self, name: &str) -> Option<&Array2<S>> {
        self.blocks.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<S>> {
        self.blocks.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Array2<S>> {
        self.get(name)
            .ok_or_else(|| Error::Build(format!("missing parameter block `{name}`")))
    }

    pub fn require_mut(&mut self, name: &str) -> Result<&mut Array2<S>> {
        self.blocks
            .get_mut(name)
            .ok_or_else(|| Error::Build(format!("missing parameter block `{name}`")))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.blocks.get_index_of(name)
    }

    pub fn by_index(&self, idx: usize) -> &Array2<S> {
        &self.blocks[idx]
    }

    pub fn by_index_mut(&mut self, idx: usize) -> &mut Array2<S> {
        &mut self.blocks[idx]
    }

    pub fn name_of(&self, idx: usize) -> &str {
        self.blocks.get_index(idx).map(|(k, _)| k.as_str()).unwrap_or("")
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<S>)> {
        self.blocks.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array2<S>)> {
        self.blocks.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.blocks.values().map(|b| b.len()).sum()
    }

    /// Number of scalars in blocks whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.blocks
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.len())
            .sum()
    }

    /// Removes every block whose name starts with `prefix`, keeping order.
    pub fn remove_prefix(&mut self, prefix: &str) -> usize {
        let before = self.blocks.len();
        self.blocks.retain(|k, _| !k.starts_with(prefix));
        before - self.blocks.len()
    }

    pub fn all_finite(&self) -> bool {
        self.blocks.values().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            blocks: self
                .blocks
                .iter()
                .map(|(k, v)| (k.clone(), v.mapv(|x| T::lit(x.as_f64()))))
                .collect(),
        }
    }

    pub fn to_blocks(&self) -> Vec<ParamBlock> {
        self.blocks
            .iter()
            .map(|(name, v)| ParamBlock {
                name: name.clone(),
                shape: [v.nrows(), v.ncols()],
                data: v.iter().map(|x| x.as_f64()).collect(),
            })
            .collect()
    }

    pub fn from_blocks(blocks: Vec<ParamBlock>) -> Result<Self> {
        let mut store = Self::new();
        for b in blocks {
            if b.data.len() != b.shape[0] * b.shape[1] {
                return Err(Error::Checkpoint(format!(
                    "block `{}` has {} values for shape {:?}",
                    b.name,
                    b.data.len(),
                    b.shape
                )));
            }
            let arr = Array2::from_shape_vec(
                (b.shape[0], b.shape[1]),
                b.data.into_iter().map(S::lit).collect(),
            )
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
            store.insert(b.name, arr)?;
        }
        Ok(store)
    }
}

/// Self-describing serialized parameter block.
///
/// Values are widened to `f64`, which round-trips `f32` exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Gradients aligned with the indices of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Grads<S> {
    pub blocks: Vec<Option<Array2<S>>>,
}

impl<S: Scalar> Grads<S> {
    pub fn zeros_like(store: &ParamStore<S>) -> Self {
        Self {
            blocks: vec![None; store.len()],
        }
    }

    pub fn get(&self, idx: usize) -> Option<&Array2<S>> {
        self.blocks.get(idx).and_then(|b| b.as_ref())
    }

    pub fn accumulate(&mut self, idx: usize, g: &Array2<S>) {
        match &mut self.blocks[idx] {
            Some(acc) => *acc += g,
            slot @ None => *slot = Some(g.clone()),
        }
    }

    /// Scalar gradient at one coordinate, zero for untouched blocks.
    pub fn at(&self, idx: usize, row: usize, col: usize) -> S {
        self.get(idx).map(|g| g[[row, col]]).unwrap_or_else(S::zero)
    }

    pub fn global_norm(&self) -> S {
        self.blocks
            .iter()
            .flatten()
            .map(|g| g.iter().map(|v| *v * *v).sum::<S>())
            .sum::<S>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: S) {
        for g in self.blocks.iter_mut().flatten() {
            g.mapv_inplace(|v| v * factor);
        }
    }
}

/// Uniform fan-in scaled initializer: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
pub fn he_uniform<S: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<S> {
    let bound = (6.0 / rows.max(1) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || S::lit(rng.random_range(-bound..bound)))
}

pub fn normal<S: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Array2<S> {
    let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
    Array2::from_shape_simple_fn((rows, cols), || S::lit(dist.sample(rng)))
}

pub fn uniform<S: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Array2<S> {
    Array2::from_shape_simple_fn((rows, cols), || S::lit(rng.random_range(-bound..bound)))
}
