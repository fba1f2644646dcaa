//! Experiment configuration: TOML text, `--set` overrides, validation and the resolved echo.

use std::path::{Path, PathBuf};

use dtn_core::data::{CensusOptions, SyntheticSpec};
use dtn_core::mtl::{ModelConfig, SetSelector};
use dtn_core::training::TrainConfig;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, Result};

/// Directory holding `census-income.data` and `census-income.test` when no paths are configured.
pub const CENSUS_DIR_ENV: &str = "CENSUS_INCOME_DIR";
pub const CENSUS_TRAIN_FILE: &str = "census-income.data";
pub const CENSUS_TEST_FILE: &str = "census-income.test";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Census,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CensusSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
    #[serde(default)]
    pub flip_marital: bool,
    #[serde(default = "default_embedding")]
    pub embedding_dim: usize,
}

impl Default for CensusSection {
    fn default() -> Self {
        Self {
            train_path: None,
            test_path: None,
            flip_marital: false,
            embedding_dim: default_embedding(),
        }
    }
}

fn default_embedding() -> usize {
    dtn_core::data::DEFAULT_EMBEDDING_DIM
}

impl CensusSection {
    pub fn options(&self) -> CensusOptions {
        CensusOptions {
            flip_marital: self.flip_marital,
            embedding_dim: self.embedding_dim,
        }
    }

    /// Configured paths, else the standard file names under `$CENSUS_INCOME_DIR`.
    pub fn paths(&self) -> Result<(PathBuf, PathBuf)> {
        let dir = std::env::var_os(CENSUS_DIR_ENV).map(PathBuf::from);
        let pick = |p: &Option<PathBuf>, file: &str| -> Result<PathBuf> {
            match (p, &dir) {
                (Some(p), _) => Ok(p.clone()),
                (None, Some(d)) => Ok(d.join(file)),
                (None, None) => Err(CliError::Config {
                    path: "dataset.census".into(),
                    message: format!("no train_path/test_path and ${CENSUS_DIR_ENV} is unset"),
                }),
            }
        };
        Ok((pick(&self.train_path, CENSUS_TRAIN_FILE)?, pick(&self.test_path, CENSUS_TEST_FILE)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    /// `divergence`, `duplicated` or `memorization`; ignored when `spec` is given.
    #[serde(default = "default_preset")]
    pub preset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<SyntheticSpec>,
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            preset: default_preset(),
            spec: None,
            n_train: default_n_train(),
            n_test: default_n_test(),
        }
    }
}

fn default_preset() -> String {
    "divergence".into()
}
fn default_n_train() -> usize {
    20_000
}
fn default_n_test() -> usize {
    5_000
}

impl SyntheticSection {
    pub fn resolved_spec(&self) -> Result<SyntheticSpec> {
        if let Some(s) = &self.spec {
            return Ok(s.clone());
        }
        match self.preset.as_str() {
            "divergence" => Ok(SyntheticSpec::divergence()),
            "duplicated" => Ok(SyntheticSpec::duplicated()),
            "memorization" => Ok(SyntheticSpec::memorization()),
            other => Err(CliError::Config {
                path: "dataset.synthetic.preset".into(),
                message: format!("unknown preset `{other}` (expected divergence, duplicated or memorization)"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DataSource,
    /// Seed of the synthetic generator.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub census: Option<CensusSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiConfig {
    /// Features to score; every schema feature when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<String>>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_repeats() -> usize {
    dtn_core::evaluation::DEFAULT_REPEATS
}

impl Default for FiConfig {
    fn default() -> Self {
        Self {
            features: None,
            repeats: default_repeats(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportConfig {
    /// `owner:index` or `owner:kind`, e.g. `shared:masknet`.
    #[serde(default = "default_selectors")]
    pub selectors: Vec<String>,
    #[serde(default = "default_sample_count")]
    pub sample_count: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_selectors() -> Vec<String> {
    vec!["shared:0".into()]
}
fn default_sample_count() -> usize {
    1000
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            selectors: default_selectors(),
            sample_count: default_sample_count(),
            seed: 0,
        }
    }
}

pub const METRICS: [&str; 2] = ["auc", "logloss"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    #[serde(default = "default_metrics")]
    pub metrics: Vec<String>,
    #[serde(default = "default_eval_batch")]
    pub batch_size: usize,
    /// Run directory whose metrics serve as the RelaImpr baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<PathBuf>,
    #[serde(default)]
    pub fi: FiConfig,
    #[serde(default)]
    pub export: ExportConfig,
}

fn default_metrics() -> Vec<String> {
    METRICS.iter().map(|m| m.to_string()).collect()
}
fn default_eval_batch() -> usize {
    4096
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            metrics: default_metrics(),
            batch_size: default_eval_batch(),
            baseline: None,
            fi: FiConfig::default(),
            export: ExportConfig::default(),
        }
    }
}

/// Exactly one of `keep`, `remove` or `threshold` selects the modules to drop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TrimConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep: Option<IndexMap<String, Vec<usize>>>,
    /// `owner:index` entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remove: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Epochs of training after the trim (0 = none).
    #[serde(default)]
    pub fine_tune_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label of this run in metrics tables; the architecture name by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub precision: Precision,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub trim: TrimConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn run_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.model.kind.as_str().to_string())
    }

    /// Task names implied by the dataset section.
    pub fn tasks(&self) -> Result<Vec<String>> {
        match self.dataset.source {
            DataSource::Census => Ok(vec![
                dtn_core::data::census::INCOME_TASK.into(),
                dtn_core::data::census::MARITAL_TASK.into(),
            ]),
            DataSource::Synthetic => Ok(self
                .synthetic()
                .resolved_spec()?
                .tasks
                .iter()
                .map(|t| t.name.clone())
                .collect()),
        }
    }

    pub fn synthetic(&self) -> SyntheticSection {
        self.dataset.synthetic.clone().unwrap_or_default()
    }

    pub fn census(&self) -> CensusSection {
        self.dataset.census.clone().unwrap_or_default()
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: String| {
            Err(CliError::Config {
                path: path.into(),
                message,
            })
        };
        match self.dataset.source {
            DataSource::Census if self.dataset.synthetic.is_some() => {
                return bad("dataset.synthetic", "given for a census dataset".into());
            }
            DataSource::Synthetic if self.dataset.census.is_some() => {
                return bad("dataset.census", "given for a synthetic dataset".into());
            }
            _ => {}
        }
        if let Some(name) = &self.name {
            if name.is_empty() || name.contains(',') {
                return bad("name", format!("{name:?} must be non-empty and free of commas"));
            }
        }
        if self.dataset.source == DataSource::Synthetic {
            let s = self.synthetic();
            if s.n_train == 0 || s.n_test == 0 {
                return bad("dataset.synthetic", "n_train and n_test must be positive".into());
            }
        }
        let tasks = self.tasks()?;
        self.training.validate(tasks.len()).map_err(|e| CliError::Config {
            path: "training".into(),
            message: e.to_string(),
        })?;
        if self.model.output_dim == 0 {
            return bad("model.output_dim", "must be positive".into());
        }
        if let Some(deps) = &self.model.task_dependencies {
            for (task, dep) in deps {
                if !tasks.contains(task) {
                    return bad("model.task_dependencies", format!("unknown task `{task}`"));
                }
                if let Some(d) = dep {
                    let (a, b) = (tasks.iter().position(|t| t == d), tasks.iter().position(|t| t == task));
                    if a.is_none() || a >= b {
                        return bad("model.task_dependencies", format!("`{task}` cannot depend on `{d}`"));
                    }
                }
            }
        }
        for m in &self.evaluation.metrics {
            if !METRICS.contains(&m.as_str()) {
                return bad("evaluation.metrics", format!("unknown metric `{m}` (expected auc or logloss)"));
            }
        }
        if self.evaluation.batch_size == 0 {
            return bad("evaluation.batch_size", "must be positive".into());
        }
        if self.evaluation.fi.repeats == 0 {
            return bad("evaluation.fi.repeats", "must be at least 1".into());
        }
        for s in &self.evaluation.export.selectors {
            s.parse::<SetSelector>().map_err(|e| CliError::Config {
                path: "evaluation.export.selectors".into(),
                message: e.to_string(),
            })?;
        }
        let rules = [self.trim.keep.is_some(), self.trim.remove.is_some(), self.trim.threshold.is_some()];
        if rules.iter().filter(|r| **r).count() > 1 {
            return bad("trim", "set only one of keep, remove and threshold".into());
        }
        if let Some(list) = &self.trim.remove {
            for r in list {
                parse_module_ref(r).map_err(|message| CliError::Config {
                    path: "trim.remove".into(),
                    message,
                })?;
            }
        }
        Ok(())
    }

    /// The config with every default written out, as TOML.
    pub fn resolved_toml(&self, n_tasks: usize) -> Result<String> {
        let mut c = self.clone();
        c.model = c.model.resolved(n_tasks);
        c.name = Some(c.run_name());
        match c.dataset.source {
            DataSource::Census => c.dataset.census = Some(c.census()),
            DataSource::Synthetic => c.dataset.synthetic = Some(c.synthetic()),
        }
        toml::to_string(&c).map_err(|e| CliError::Other(format!("cannot serialize resolved config: {e}")))
    }
}

/// Parses `owner:index`.
pub fn parse_module_ref(s: &str) -> std::result::Result<(String, usize), String> {
    let (owner, idx) = s.split_once(':').ok_or_else(|| format!("`{s}` is not owner:index"))?;
    let idx = idx.parse().map_err(|_| format!("`{s}` has a non-numeric module index"))?;
    Ok((owner.to_string(), idx))
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses a `key=value` override; the value is read as a TOML literal, else as a bare string.
pub fn parse_override(s: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = s.split_once('=').ok_or_else(|| CliError::Override(format!("`{s}` is not key=value")))?;
    let key: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if key.iter().any(|k| k.is_empty()) {
        return Err(CliError::Override(format!("empty key segment in `{s}`")));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((key, value))
}

fn apply_override(root: &mut Table, key: &[String], value: Value) -> Result<()> {
    let mut table = root;
    for (i, k) in key[..key.len() - 1].iter().enumerate() {
        let entry = table.entry(k.clone()).or_insert_with(|| Value::Table(Table::new()));
        table = entry.as_table_mut().ok_or_else(|| {
            CliError::Override(format!("`{}` is not a table", key[..=i].join(".")))
        })?;
    }
    table.insert(key[key.len() - 1].clone(), value);
    Ok(())
}

/// Module tables inherit the model's `output_dim` unless they set their own.
fn inherit_output_dim(root: &mut Table) {
    let Some(Value::Table(model)) = root.get_mut("model") else {
        return;
    };
    let dim = model
        .get("output_dim")
        .and_then(Value::as_integer)
        .unwrap_or(dtn_core::interactions::DEFAULT_OUTPUT_DIM as i64);
    let fill = |v: &mut Value| {
        if let Value::Table(t) = v {
            t.entry("output_dim").or_insert(Value::Integer(dim));
        }
    };
    for key in ["shared_modules", "task_modules"] {
        if let Some(Value::Array(a)) = model.get_mut(key) {
            a.iter_mut().for_each(fill);
        }
    }
    if let Some(v) = model.get_mut("stack") {
        fill(v);
    }
    if let Some(Value::Table(over)) = model.get_mut("task_module_overrides") {
        for (_, v) in over.iter_mut() {
            if let Value::Array(a) = v {
                a.iter_mut().for_each(fill);
            }
        }
    }
}

/// Parses, overrides, deserializes and validates a config.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut root: Table = toml::from_str(text).map_err(|e| CliError::Syntax {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        message: e.message().to_string(),
    })?;
    for o in overrides {
        let (key, value) = parse_override(o)?;
        apply_override(&mut root, &key, value)?;
    }
    inherit_output_dim(&mut root);
    let config: ExperimentConfig = serde_path_to_error::deserialize(Value::Table(root)).map_err(|e| {
        let mut path = e.path().to_string();
        let message = e.inner().to_string();
        // Name the missing key itself, not its parent table.
        if let Some(field) = message.strip_prefix("missing field `").and_then(|m| m.split('`').next()) {
            path = if path == "." || path.is_empty() { field.to_string() } else { format!("{path}.{field}") };
        }
        CliError::Config { path, message }
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_config(&text, overrides).map_err(|e| e.in_file(path))
}

/// Presets shipped with the tool.
pub const PRESETS: [(&str, &str); 3] = [
    ("census-small", include_str!("../presets/census-small.toml")),
    ("synthetic-default", include_str!("../presets/synthetic-default.toml")),
    ("census-full", include_str!("../presets/census-full.toml")),
];

pub fn preset(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| CliError::Usage(format!("unknown preset `{name}`")))
}
