//! Synthetic multi-task data with known generating coefficients.
//!
//! Each task's label is `Bernoulli(sigmoid(logit))` where the logit sums an
//! intercept, per-feature linear terms and pairwise cross terms. Categorical
//! features contribute through a fixed standard-normal effect per category;
//! a `table` pair contributes an arbitrary standard-normal value per id
//! combination, which no low-rank product of embeddings can express exactly.

use std::collections::HashSet;
use std::sync::Arc;

use indexmap::IndexMap;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, ExampleBatch};
use super::schema::{FeatureDef, FeatureSchema};
use crate::error::{Error, Result};
use crate::scalar::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynTask {
    pub name: String,
    #[serde(default)]
    pub intercept: f64,
    /// Copy another task's labels verbatim (control experiments).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<String>,
    /// Preceding task recorded in the schema's dependency chain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depends_on: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynKind {
    Categorical,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynFeature {
    pub name: String,
    pub kind: SynKind,
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    /// Linear coefficient per task; absent tasks are zero.
    #[serde(default)]
    pub coefficients: IndexMap<String, f64>,
}

fn default_vocab() -> usize {
    20
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    /// `value(a) * value(b)`.
    #[default]
    Product,
    /// Independent standard-normal value per `(id_a, id_b)`; both features categorical.
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynPair {
    pub a: String,
    pub b: String,
    #[serde(default)]
    pub kind: PairKind,
    #[serde(default)]
    pub coefficients: IndexMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub tasks: Vec<SynTask>,
    pub features: Vec<SynFeature>,
    #[serde(default)]
    pub pairs: Vec<SynPair>,
    #[serde(default = "default_embedding")]
    pub embedding_dim: usize,
}

fn default_embedding() -> usize {
    super::schema::DEFAULT_EMBEDDING_DIM
}

fn coefs(pairs: &[(&str, f64)]) -> IndexMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn cat(name: &str, vocab: usize, c: &[(&str, f64)]) -> SynFeature {
    SynFeature {
        name: name.into(),
        kind: SynKind::Categorical,
        vocab_size: vocab,
        coefficients: coefs(c),
    }
}

fn cont(name: &str, c: &[(&str, f64)]) -> SynFeature {
    SynFeature {
        name: name.into(),
        kind: SynKind::Continuous,
        vocab_size: default_vocab(),
        coefficients: coefs(c),
    }
}

fn task(name: &str, intercept: f64, depends_on: Option<&str>) -> SynTask {
    SynTask {
        name: name.into(),
        intercept,
        duplicate_of: None,
        depends_on: depends_on.map(str::to_string),
    }
}

impl SyntheticSpec {
    /// Two tasks (`ctr` then `cvr`) whose relevant features barely overlap.
    pub fn divergence() -> Self {
        Self {
            tasks: vec![task("ctr", -0.3, None), task("cvr", -0.3, Some("ctr"))],
            features: vec![
                cat("shared_cat", 20, &[("ctr", 0.5), ("cvr", 0.5)]),
                cat("ctr_cat_a", 20, &[("ctr", 1.5)]),
                cont("ctr_num", &[("ctr", 1.2)]),
                cat("ctr_cat_b", 20, &[("ctr", 1.0)]),
                cat("cvr_cat_a", 20, &[("cvr", 1.5)]),
                cont("cvr_num", &[("cvr", 1.2)]),
                cat("cvr_cat_b", 20, &[("cvr", 1.0)]),
                cat("noise_cat", 20, &[]),
                cont("noise_num", &[]),
            ],
            pairs: vec![
                SynPair {
                    a: "ctr_cat_a".into(),
                    b: "ctr_cat_b".into(),
                    kind: PairKind::Product,
                    coefficients: coefs(&[("ctr", 1.0)]),
                },
                SynPair {
                    a: "cvr_cat_a".into(),
                    b: "cvr_cat_b".into(),
                    kind: PairKind::Product,
                    coefficients: coefs(&[("cvr", 1.0)]),
                },
            ],
            embedding_dim: 8,
        }
    }

    /// [`SyntheticSpec::divergence`] with the second task's labels copied from the first.
    pub fn duplicated() -> Self {
        let mut spec = Self::divergence();
        spec.tasks[1].duplicate_of = Some("ctr".into());
        spec
    }

    /// Labels driven by memorizable id-pair tables, one per task.
    pub fn memorization() -> Self {
        Self {
            tasks: vec![task("ctr", 0.0, None), task("cvr", 0.0, Some("ctr"))],
            features: vec![
                cat("shared_cat", 10, &[("ctr", 0.3), ("cvr", 0.3)]),
                cat("ctr_left", 30, &[("ctr", 0.2)]),
                cat("ctr_right", 30, &[]),
                cat("cvr_left", 30, &[("cvr", 0.2)]),
                cat("cvr_right", 30, &[]),
                cont("noise_num", &[]),
            ],
            pairs: vec![
                SynPair {
                    a: "ctr_left".into(),
                    b: "ctr_right".into(),
                    kind: PairKind::Table,
                    coefficients: coefs(&[("ctr", 2.5)]),
                },
                SynPair {
                    a: "cvr_left".into(),
                    b: "cvr_right".into(),
                    kind: PairKind::Table,
                    coefficients: coefs(&[("cvr", 2.5)]),
                },
            ],
            embedding_dim: 8,
        }
    }

    fn task_index(&self, name: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::SyntheticSpec(format!("unknown task `{name}`")))
    }

    fn feature_index(&self, name: &str) -> Result<usize> {
        self.features
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::SyntheticSpec(format!("unknown feature `{name}`")))
    }

    /// Resolves a task through `duplicate_of` links to the task that generates its labels.
    fn source_task(&self, t: usize) -> Result<usize> {
        let mut cur = t;
        for _ in 0..=self.tasks.len() {
            match &self.tasks[cur].duplicate_of {
                Some(src) => cur = self.task_index(src)?,
                None => return Ok(cur),
            }
        }
        Err(Error::SyntheticSpec("cyclic duplicate_of".into()))
    }

    fn validate(&self) -> Result<GroundTruth> {
        if self.tasks.len() < 2 {
            return Err(Error::SyntheticSpec("at least two tasks required".into()));
        }
        let mut names = HashSet::new();
        for t in &self.tasks {
            if !names.insert(t.name.as_str()) {
                return Err(Error::SyntheticSpec(format!("duplicate task `{}`", t.name)));
            }
        }
        let mut names = HashSet::new();
        for f in &self.features {
            if !names.insert(f.name.as_str()) {
                return Err(Error::SyntheticSpec(format!("duplicate feature `{}`", f.name)));
            }
            if f.kind == SynKind::Categorical && f.vocab_size == 0 {
                return Err(Error::SyntheticSpec(format!("feature `{}` has empty vocabulary", f.name)));
            }
            for t in f.coefficients.keys() {
                self.task_index(t)?;
            }
        }
        let n_tasks = self.tasks.len();
        let sources: Vec<usize> = (0..n_tasks).map(|t| self.source_task(t)).collect::<Result<_>>()?;

        let mut linear = vec![vec![0.0; self.features.len()]; n_tasks];
        for (fi, f) in self.features.iter().enumerate() {
            for (t, c) in &f.coefficients {
                let ti = self.task_index(t)?;
                linear[ti][fi] = *c;
            }
        }
        let mut pairs = Vec::new();
        for p in &self.pairs {
            let (a, b) = (self.feature_index(&p.a)?, self.feature_index(&p.b)?);
            if a == b {
                return Err(Error::SyntheticSpec(format!("pair crosses `{}` with itself", p.a)));
            }
            if p.kind == PairKind::Table
                && (self.features[a].kind != SynKind::Categorical || self.features[b].kind != SynKind::Categorical)
            {
                return Err(Error::SyntheticSpec(format!(
                    "table pair ({}, {}) needs categorical features",
                    p.a, p.b
                )));
            }
            let mut c = vec![0.0; n_tasks];
            for (t, v) in &p.coefficients {
                c[self.task_index(t)?] = *v;
            }
            pairs.push(PairTerm {
                a,
                b,
                kind: p.kind,
                coefficients: c,
                table: None,
            });
        }
        // Duplicates share their source's coefficients.
        for t in 0..n_tasks {
            if sources[t] != t {
                linear[t] = linear[sources[t]].clone();
                for p in &mut pairs {
                    p.coefficients[t] = p.coefficients[sources[t]];
                }
            }
        }

        let relevant: Vec<Vec<bool>> = (0..n_tasks)
            .map(|t| {
                (0..self.features.len())
                    .map(|f| {
                        linear[t][f] != 0.0
                            || pairs.iter().any(|p| p.coefficients[t] != 0.0 && (p.a == f || p.b == f))
                    })
                    .collect()
            })
            .collect();
        let relevant_count =
            |f: usize| -> usize { (0..n_tasks).filter(|&t| relevant[t][f]).count() };

        let irrelevant: Vec<usize> = (0..self.features.len()).filter(|&f| relevant_count(f) == 0).collect();
        if irrelevant.is_empty() {
            return Err(Error::SyntheticSpec(
                "spec needs at least one irrelevant feature (zero coefficient in every task)".into(),
            ));
        }
        let generating: Vec<usize> = (0..n_tasks).filter(|&t| sources[t] == t).collect();
        if generating.len() >= 2 && !(0..self.features.len()).any(|f| generating.iter().filter(|&&t| relevant[t][f]).count() >= 2) {
            return Err(Error::SyntheticSpec("spec needs at least one shared feature".into()));
        }
        let mut exclusive = Vec::new();
        for &t in &generating {
            let own: Vec<usize> = (0..self.features.len())
                .filter(|&f| relevant[t][f] && generating.iter().all(|&u| u == t || !relevant[u][f]))
                .collect();
            if own.is_empty() {
                return Err(Error::SyntheticSpec(format!(
                    "task `{}` has no task-exclusive feature",
                    self.tasks[t].name
                )));
            }
            if !pairs.iter().any(|p| p.coefficients[t] != 0.0) {
                return Err(Error::SyntheticSpec(format!(
                    "task `{}` has no label-relevant feature pair",
                    self.tasks[t].name
                )));
            }
            for f in own {
                if relevant_count(f) == 1 {
                    exclusive.push((f, t));
                }
            }
        }

        Ok(GroundTruth {
            tasks: self.tasks.iter().map(|t| t.name.clone()).collect(),
            features: self.features.iter().map(|f| f.name.clone()).collect(),
            intercepts: (0..n_tasks).map(|t| self.tasks[sources[t]].intercept).collect(),
            linear,
            pairs,
            category_effects: Vec::new(),
            task_exclusive: exclusive,
            irrelevant,
            sources,
        })
    }

    fn schema(&self) -> Result<FeatureSchema> {
        let features = self
            .features
            .iter()
            .map(|f| {
                let mut def = match f.kind {
                    SynKind::Categorical => FeatureDef::categorical(&f.name, f.vocab_size),
                    SynKind::Continuous => FeatureDef::continuous(&f.name),
                };
                def.embedding_dim = self.embedding_dim;
                def
            })
            .collect();
        let deps = self
            .tasks
            .iter()
            .map(|t| (t.name.clone(), t.depends_on.clone()))
            .collect();
        FeatureSchema::new(features, self.tasks.iter().map(|t| t.name.clone()).collect(), deps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairTerm {
    pub a: usize,
    pub b: usize,
    pub kind: PairKind,
    pub coefficients: Vec<f64>,
    pub table: Option<Array2<f64>>,
}

/// The exact generating process behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub tasks: Vec<String>,
    pub features: Vec<String>,
    pub intercepts: Vec<f64>,
    /// `linear[task][feature]`.
    pub linear: Vec<Vec<f64>>,
    pub pairs: Vec<PairTerm>,
    /// Standard-normal effect per category id, `None` for continuous features.
    pub category_effects: Vec<Option<Vec<f64>>>,
    /// `(feature, task)` for features relevant to exactly one task.
    pub task_exclusive: Vec<(usize, usize)>,
    pub irrelevant: Vec<usize>,
    sources: Vec<usize>,
}

impl GroundTruth {
    pub fn is_relevant(&self, feature: usize, task: usize) -> bool {
        self.linear[task][feature] != 0.0
            || self
                .pairs
                .iter()
                .any(|p| p.coefficients[task] != 0.0 && (p.a == feature || p.b == feature))
    }

    pub fn relevant_features(&self, task: usize) -> Vec<usize> {
        (0..self.features.len()).filter(|&f| self.is_relevant(f, task)).collect()
    }

    /// Task whose draws produce `task`'s labels.
    pub fn label_source(&self, task: usize) -> usize {
        self.sources[task]
    }

    fn value(&self, data: &Dataset, row: usize, feature: usize) -> f64 {
        let schema = data.schema();
        match schema.column(feature) {
            super::schema::Column::Categorical(c) => {
                let id = data.data().categorical_ids[[row, c]];
                self.category_effects[feature].as_ref().map(|e| e[id]).unwrap_or(0.0)
            }
            super::schema::Column::Continuous(c) => data.data().continuous_values[[row, c]],
        }
    }

    fn id(&self, data: &Dataset, row: usize, feature: usize) -> usize {
        match data.schema().column(feature) {
            super::schema::Column::Categorical(c) => data.data().categorical_ids[[row, c]],
            super::schema::Column::Continuous(_) => 0,
        }
    }

    /// True logit of `task` for one row, optionally with every term touching `drop` removed.
    pub fn logit(&self, data: &Dataset, row: usize, task: usize, drop: Option<usize>) -> f64 {
        let mut z = self.intercepts[task];
        for (f, &c) in self.linear[task].iter().enumerate() {
            if c != 0.0 && Some(f) != drop {
                z += c * self.value(data, row, f);
            }
        }
        for p in &self.pairs {
            let c = p.coefficients[task];
            if c == 0.0 || Some(p.a) == drop || Some(p.b) == drop {
                continue;
            }
            z += c * match p.kind {
                PairKind::Product => self.value(data, row, p.a) * self.value(data, row, p.b),
                PairKind::Table => {
                    let t = p.table.as_ref().expect("table pair without table");
                    t[[self.id(data, row, p.a), self.id(data, row, p.b)]]
                }
            };
        }
        z
    }

    pub fn probabilities(&self, data: &Dataset, task: usize) -> Vec<f64> {
        (0..data.len()).map(|r| sigmoid(self.logit(data, r, task, None))).collect()
    }

    /// Expected 0-1 risk of thresholding the true logit at zero, optionally
    /// with one feature's terms removed from the classifier.
    pub fn bayes_risk(&self, data: &Dataset, task: usize, without: Option<usize>) -> f64 {
        let mut risk = 0.0;
        for r in 0..data.len() {
            let p = sigmoid(self.logit(data, r, task, None));
            let predict_one = self.logit(data, r, task, without) > 0.0;
            risk += if predict_one { 1.0 - p } else { p };
        }
        risk / data.len().max(1) as f64
    }
}

/// Draws train and test splits from `spec`; identical for identical `(spec, seed)`.
pub fn generate_synthetic(
    n_train: usize,
    n_test: usize,
    spec: &SyntheticSpec,
    seed: u64,
) -> Result<(Dataset, Dataset, Arc<FeatureSchema>, GroundTruth)> {
    let mut truth = spec.validate()?;
    let schema = Arc::new(spec.schema()?);

    let mut structure_rng = ChaCha8Rng::seed_from_u64(seed);
    truth.category_effects = spec
        .features
        .iter()
        .map(|f| match f.kind {
            SynKind::Categorical => Some(
                (0..f.vocab_size)
                    .map(|_| StandardNormal.sample(&mut structure_rng))
                    .collect(),
            ),
            SynKind::Continuous => None,
        })
        .collect();
    for p in &mut truth.pairs {
        if p.kind == PairKind::Table {
            let (va, vb) = (spec.features[p.a].vocab_size, spec.features[p.b].vocab_size);
            p.table = Some(Array2::from_shape_simple_fn((va, vb), || {
                StandardNormal.sample(&mut structure_rng)
            }));
        }
    }

    let draw = |n: usize, stream: u64| -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let n_cat = schema.n_categorical();
        let n_cont = schema.n_continuous();
        let mut cat = Array2::zeros((n, n_cat));
        let mut cont = Array2::zeros((n, n_cont));
        for r in 0..n {
            let (mut ci, mut xi) = (0, 0);
            for f in &spec.features {
                match f.kind {
                    SynKind::Categorical => {
                        cat[[r, ci]] = rng.random_range(0..f.vocab_size);
                        ci += 1;
                    }
                    SynKind::Continuous => {
                        cont[[r, xi]] = StandardNormal.sample(&mut rng);
                        xi += 1;
                    }
                }
            }
        }
        let unlabeled = Dataset::new(
            schema.clone(),
            ExampleBatch {
                categorical_ids: cat,
                continuous_values: cont,
                labels: Array2::zeros((n, spec.tasks.len())),
            },
        )?;
        let mut labels = Array2::zeros((n, spec.tasks.len()));
        for t in 0..spec.tasks.len() {
            if truth.sources[t] != t {
                continue;
            }
            for r in 0..n {
                let p = sigmoid(truth.logit(&unlabeled, r, t, None));
                labels[[r, t]] = u8::from(rng.random::<f64>() < p);
            }
        }
        for t in 0..spec.tasks.len() {
            let src = truth.sources[t];
            if src != t {
                let col = labels.column(src).to_owned();
                labels.column_mut(t).assign(&col);
            }
        }
        let mut data = unlabeled.data().clone();
        data.labels = labels;
        Dataset::new(schema.clone(), data)
    };

    let train = draw(n_train, 1)?;
    let test = draw(n_test, 2)?;
    Ok((train, test, schema, truth))
}
