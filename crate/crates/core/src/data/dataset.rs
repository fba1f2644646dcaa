use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::schema::{Column, FeatureKind, FeatureSchema};
use crate::error::{Error, Result};

/// A batch of encoded examples with one binary label column per task.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleBatch {
    pub categorical_ids: Array2<usize>,
    pub continuous_values: Array2<f64>,
    pub labels: Array2<u8>,
}

impl ExampleBatch {
    pub fn len(&self) -> usize {
        self.labels.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        let n = self.labels.nrows();
        if self.categorical_ids.nrows() != n || self.continuous_values.nrows() != n {
            return Err(Error::Shape(format!(
                "row counts differ: categorical {}, continuous {}, labels {}",
                self.categorical_ids.nrows(),
                self.continuous_values.nrows(),
                n
            )));
        }
        if self.categorical_ids.ncols() != schema.n_categorical()
            || self.continuous_values.ncols() != schema.n_continuous()
            || self.labels.ncols() != schema.tasks.len()
        {
            return Err(Error::Shape(format!(
                "batch has {}/{}/{} columns, schema wants {}/{}/{}",
                self.categorical_ids.ncols(),
                self.continuous_values.ncols(),
                self.labels.ncols(),
                schema.n_categorical(),
                schema.n_continuous(),
                schema.tasks.len()
            )));
        }
        for (col, f) in schema.categorical_features().enumerate() {
            let vocab = f.vocab_size().unwrap_or(0);
            if let Some(bad) = self.categorical_ids.column(col).iter().find(|&&id| id >= vocab) {
                return Err(Error::Schema(format!(
                    "feature `{}` id {bad} outside vocabulary of size {vocab}",
                    f.name
                )));
            }
        }
        if self.labels.iter().any(|&y| y > 1) {
            return Err(Error::Schema("labels must be 0 or 1".into()));
        }
        Ok(())
    }
}

/// An immutable in-memory dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Arc<FeatureSchema>,
    data: ExampleBatch,
}

impl Dataset {
    pub fn new(schema: Arc<FeatureSchema>, data: ExampleBatch) -> Result<Self> {
        data.validate(&schema)?;
        Ok(Self { schema, data })
    }

    pub fn schema(&self) -> &Arc<FeatureSchema> {
        &self.schema
    }

    pub fn data(&self) -> &ExampleBatch {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn labels(&self, task: usize) -> Vec<u8> {
        self.data.labels.column(task).to_vec()
    }

    pub fn select(&self, rows: &[usize]) -> ExampleBatch {
        ExampleBatch {
            categorical_ids: self.data.categorical_ids.select(Axis(0), rows),
            continuous_values: self.data.continuous_values.select(Axis(0), rows),
            labels: self.data.labels.select(Axis(0), rows),
        }
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            data: self.select(rows),
        }
    }

    /// Same rows re-attached to a schema with identical columns (e.g. new embedding sizes).
    pub fn with_schema(&self, schema: Arc<FeatureSchema>) -> Result<Dataset> {
        Dataset::new(schema, self.data.clone())
    }

    /// Copy whose `feature` column is shuffled by a permutation drawn from `seed`.
    pub fn permute_feature(&self, feature: &str, seed: u64) -> Result<Dataset> {
        let idx = self
            .schema
            .feature_index(feature)
            .ok_or_else(|| Error::UnknownFeature(feature.to_string()))?;
        let perm = permutation(self.len(), seed);
        let mut data = self.data.clone();
        match self.schema.column(idx) {
            Column::Categorical(c) => {
                let src = self.data.categorical_ids.column(c);
                for (dst, &p) in data.categorical_ids.column_mut(c).iter_mut().zip(&perm) {
                    *dst = src[p];
                }
            }
            Column::Continuous(c) => {
                let src = self.data.continuous_values.column(c);
                for (dst, &p) in data.continuous_values.column_mut(c).iter_mut().zip(&perm) {
                    *dst = src[p];
                }
            }
        }
        Ok(Dataset {
            schema: self.schema.clone(),
            data,
        })
    }

    pub fn batches(&self, batch_size: usize, shuffle: bool, seed: u64) -> Result<BatchIter<'_>> {
        if batch_size == 0 {
            return Err(Error::Other("batch_size must be at least 1".into()));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        if shuffle {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        Ok(BatchIter {
            dataset: self,
            order,
            batch_size,
            pos: 0,
        })
    }

    /// SHA-256 over the schema and every encoded value.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&*self.schema).unwrap_or_default());
        for v in self.data.categorical_ids.iter() {
            h.update((*v as u64).to_le_bytes());
        }
        for v in self.data.continuous_values.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update(self.data.labels.iter().copied().collect::<Vec<u8>>());
        hex::encode(h.finalize())
    }

    /// Writes a header of feature and task names followed by one line per example.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv_to(&mut w).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let header: Vec<&str> = self
            .schema
            .features
            .iter()
            .map(|f| f.name.as_str())
            .chain(self.schema.tasks.iter().map(String::as_str))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        let columns: Vec<Column> = (0..self.schema.features.len())
            .map(|i| self.schema.column(i))
            .collect();
        let mut line = String::new();
        for r in 0..self.len() {
            line.clear();
            for (i, col) in columns.iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                match *col {
                    Column::Categorical(c) => line.push_str(&self.data.categorical_ids[[r, c]].to_string()),
                    Column::Continuous(c) => line.push_str(&self.data.continuous_values[[r, c]].to_string()),
                }
            }
            for t in 0..self.schema.tasks.len() {
                line.push(',');
                line.push_str(&self.data.labels[[r, t]].to_string());
            }
            writeln!(w, "{line}")?;
        }
        w.flush()
    }

    /// Positive rate per task.
    pub fn label_means(&self) -> Vec<f64> {
        (0..self.schema.tasks.len())
            .map(|t| {
                let col = self.data.labels.column(t);
                col.iter().map(|&y| y as f64).sum::<f64>() / col.len().max(1) as f64
            })
            .collect()
    }

    /// Number of distinct ids actually present per categorical feature.
    pub fn cardinalities(&self) -> Vec<(String, usize)> {
        self.schema
            .categorical_features()
            .enumerate()
            .map(|(c, f)| {
                let vocab = match f.kind {
                    FeatureKind::Categorical { vocab_size } => vocab_size,
                    FeatureKind::Continuous => 0,
                };
                let mut seen = vec![false; vocab];
                for &id in self.data.categorical_ids.column(c) {
                    seen[id] = true;
                }
                (f.name.clone(), seen.iter().filter(|s| **s).count())
            })
            .collect()
    }
}

/// The permutation `permute_feature` applies for `(n, seed)`: row `i` takes source row `perm[i]`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm
}

/// Yields each example exactly once; the last batch may be short.
pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = ExampleBatch;

    fn next(&mut self) -> Option<ExampleBatch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.dataset.select(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl ExactSizeIterator for BatchIter<'_> {}
