use std::collections::HashSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EMBEDDING_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Categorical { vocab_size: usize },
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
    pub embedding_dim: usize,
    /// Category strings by id; id 0 is the out-of-vocabulary bucket.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Vec<String>>,
    /// Train-split `(mean, std)` used to standardize a continuous column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<(f64, f64)>,
}

impl FeatureDef {
    pub fn categorical(name: impl Into<String>, vocab_size: usize) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Categorical { vocab_size },
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            vocabulary: None,
            standardization: None,
        }
    }

    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Continuous,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            vocabulary: None,
            standardization: None,
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, FeatureKind::Categorical { .. })
    }

    pub fn vocab_size(&self) -> Option<usize> {
        match self.kind {
            FeatureKind::Categorical { vocab_size } => Some(vocab_size),
            FeatureKind::Continuous => None,
        }
    }
}

/// Where a feature's values live inside a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Categorical(usize),
    Continuous(usize),
}

/// Declarative description of predictors and prediction tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureDef>,
    pub tasks: Vec<String>,
    /// Task → task whose prediction precedes it (click before purchase, …).
    #[serde(default)]
    pub task_dependencies: IndexMap<String, Option<String>>,
}

impl FeatureSchema {
    pub fn new(
        features: Vec<FeatureDef>,
        tasks: Vec<String>,
        task_dependencies: IndexMap<String, Option<String>>,
    ) -> Result<Self> {
        let schema = Self {
            features,
            tasks,
            task_dependencies,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature `{}`", f.name)));
            }
            if f.embedding_dim == 0 {
                return Err(Error::Schema(format!("feature `{}` has zero embedding_dim", f.name)));
            }
            if let FeatureKind::Categorical { vocab_size } = f.kind {
                if vocab_size == 0 {
                    return Err(Error::Schema(format!("feature `{}` has empty vocabulary", f.name)));
                }
            }
        }
        if self.tasks.is_empty() {
            return Err(Error::Schema("no tasks".into()));
        }
        let mut seen = HashSet::new();
        for t in &self.tasks {
            if !seen.insert(t.as_str()) {
                return Err(Error::Schema(format!("duplicate task `{t}`")));
            }
        }
        for (task, dep) in &self.task_dependencies {
            let pos = self
                .task_index(task)
                .ok_or_else(|| Error::Schema(format!("dependency for unknown task `{task}`")))?;
            if let Some(dep) = dep {
                let dpos = self.task_index(dep).ok_or_else(|| {
                    Error::Schema(format!("task `{task}` depends on unknown task `{dep}`"))
                })?;
                if dpos >= pos {
                    return Err(Error::Schema(format!(
                        "task `{task}` depends on `{dep}`, which is not an earlier task"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn task_index(&self, name: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t == name)
    }

    /// Index of the task preceding `task`, if any.
    pub fn preceding(&self, task: usize) -> Option<usize> {
        self.task_dependencies
            .get(&self.tasks[task])
            .and_then(|d| d.as_deref())
            .and_then(|d| self.task_index(d))
    }

    pub fn column(&self, feature: usize) -> Column {
        let before = &self.features[..feature];
        if self.features[feature].is_categorical() {
            Column::Categorical(before.iter().filter(|f| f.is_categorical()).count())
        } else {
            Column::Continuous(before.iter().filter(|f| !f.is_categorical()).count())
        }
    }

    pub fn n_categorical(&self) -> usize {
        self.features.iter().filter(|f| f.is_categorical()).count()
    }

    pub fn n_continuous(&self) -> usize {
        self.features.len() - self.n_categorical()
    }

    pub fn categorical_features(&self) -> impl Iterator<Item = &FeatureDef> {
        self.features.iter().filter(|f| f.is_categorical())
    }

    pub fn continuous_features(&self) -> impl Iterator<Item = &FeatureDef> {
        self.features.iter().filter(|f| !f.is_categorical())
    }

    /// Width of the concatenated embedding representation.
    pub fn input_width(&self) -> usize {
        self.features.iter().map(|f| f.embedding_dim).sum()
    }

    pub fn with_embedding_dim(mut self, dim: usize) -> Self {
        for f in &mut self.features {
            f.embedding_dim = dim;
        }
        self
    }

    pub fn with_dependencies(mut self, deps: IndexMap<String, Option<String>>) -> Result<Self> {
        self.task_dependencies = deps;
        self.validate()?;
        Ok(self)
    }
}
