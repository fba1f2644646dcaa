use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::interactions::{FimKind, FimSpec, DEFAULT_OUTPUT_DIM};

/// Interaction modules per model when the config leaves module lists empty.
pub const DEFAULT_MODULES_PER_MODEL: usize = 12;
pub const DEFAULT_TOWER_HIDDEN: [usize; 2] = [256, 128];
/// Shared experts for MMoE/SFM and per-set experts for PLE.
pub const DEFAULT_EXPERTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    SharedBottom,
    Mmoe,
    Ple,
    Sfm,
    Tfi,
    Dtn,
}

impl Architecture {
    pub const ALL: [Architecture; 6] = [
        Architecture::SharedBottom,
        Architecture::Mmoe,
        Architecture::Ple,
        Architecture::Sfm,
        Architecture::Tfi,
        Architecture::Dtn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::SharedBottom => "shared_bottom",
            Architecture::Mmoe => "mmoe",
            Architecture::Ple => "ple",
            Architecture::Sfm => "sfm",
            Architecture::Tfi => "tfi",
            Architecture::Dtn => "dtn",
        }
    }

    /// Whether the architecture owns one module set per task.
    pub fn has_task_sets(self) -> bool {
        matches!(self, Architecture::Ple | Architecture::Tfi | Architecture::Dtn)
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Architecture {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| crate::Error::Build(format!("unknown architecture `{s}`")))
    }
}

/// Task-sensitive scaling of the preceding task's modules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsnConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Stop gradients from flowing into the preceding task through its prediction.
    #[serde(default)]
    pub detach: bool,
}

fn yes() -> bool {
    true
}

impl Default for TsnConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            detach: false,
        }
    }
}

/// Model section of an experiment.
///
/// Unset module lists are filled with architecture defaults by [`ModelConfig::resolved`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: Architecture,
    #[serde(default = "default_output_dim")]
    pub output_dim: usize,
    /// Shared set (shared experts, or the single trunk for Shared-Bottom).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_modules: Option<Vec<FimSpec>>,
    /// Module list replicated into every task set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_modules: Option<Vec<FimSpec>>,
    /// Per-task replacement of `task_modules`.
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub task_module_overrides: IndexMap<String, Vec<FimSpec>>,
    /// SFM interaction stack applied to the embeddings before the experts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stack: Option<FimSpec>,
    #[serde(default = "default_tower_hidden")]
    pub tower_hidden: Vec<usize>,
    /// Overrides the schema's task dependency chain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_dependencies: Option<IndexMap<String, Option<String>>>,
    #[serde(default)]
    pub tsn: TsnConfig,
    /// Per-task TSN overrides.
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub tsn_overrides: IndexMap<String, TsnConfig>,
    /// Total parameter target; modules share what embeddings, gates and towers leave.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter_budget: Option<usize>,
    #[serde(default = "default_true")]
    pub gate_bias: bool,
}

fn default_output_dim() -> usize {
    DEFAULT_OUTPUT_DIM
}

fn default_tower_hidden() -> Vec<usize> {
    DEFAULT_TOWER_HIDDEN.to_vec()
}

fn default_true() -> bool {
    true
}

/// Cycles through the interaction kinds used inside MFI sets.
pub fn mixed_modules(count: usize, output_dim: usize) -> Vec<FimSpec> {
    const CYCLE: [FimKind; 3] = [FimKind::MaskNet, FimKind::Gdcn, FimKind::MemoNet];
    (0..count)
        .map(|i| FimSpec::new(CYCLE[i % CYCLE.len()]).with_output_dim(output_dim))
        .collect()
}

fn mlps(count: usize, output_dim: usize) -> Vec<FimSpec> {
    vec![FimSpec::new(FimKind::Mlp).with_output_dim(output_dim); count]
}

impl ModelConfig {
    pub fn new(kind: Architecture) -> Self {
        Self {
            kind,
            output_dim: DEFAULT_OUTPUT_DIM,
            shared_modules: None,
            task_modules: None,
            task_module_overrides: IndexMap::new(),
            stack: None,
            tower_hidden: default_tower_hidden(),
            task_dependencies: None,
            tsn: TsnConfig::default(),
            tsn_overrides: IndexMap::new(),
            parameter_budget: None,
            gate_bias: true,
        }
    }

    pub fn with_output_dim(mut self, dim: usize) -> Self {
        self.output_dim = dim;
        for spec in self
            .shared_modules
            .iter_mut()
            .flatten()
            .chain(self.task_modules.iter_mut().flatten())
            .chain(self.task_module_overrides.values_mut().flatten())
            .chain(self.stack.iter_mut())
        {
            spec.output_dim = dim;
        }
        self
    }

    pub fn tsn_for(&self, task: &str) -> TsnConfig {
        self.tsn_overrides.get(task).copied().unwrap_or(self.tsn)
    }

    /// Fills unset module lists with the architecture defaults for `n_tasks` tasks.
    pub fn resolved(&self, n_tasks: usize) -> Self {
        let mut c = self.clone();
        let out = c.output_dim;
        let per_set = (DEFAULT_MODULES_PER_MODEL / (n_tasks + 1)).max(1);
        match c.kind {
            Architecture::SharedBottom => {
                c.shared_modules.get_or_insert_with(|| mlps(1, out));
            }
            Architecture::Mmoe => {
                c.shared_modules.get_or_insert_with(|| mlps(DEFAULT_EXPERTS, out));
            }
            Architecture::Ple => {
                c.shared_modules.get_or_insert_with(|| mlps(DEFAULT_EXPERTS, out));
                c.task_modules.get_or_insert_with(|| mlps(DEFAULT_EXPERTS, out));
            }
            Architecture::Sfm => {
                c.stack.get_or_insert_with(|| FimSpec::new(FimKind::MaskNet).with_output_dim(out));
                c.shared_modules.get_or_insert_with(|| mlps(DEFAULT_EXPERTS, out));
            }
            Architecture::Tfi | Architecture::Dtn => {
                c.shared_modules.get_or_insert_with(|| mixed_modules(per_set, out));
                c.task_modules.get_or_insert_with(|| mixed_modules(per_set, out));
            }
        }
        c
    }
}
