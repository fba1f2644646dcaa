use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Architecture, ModelConfig, TsnConfig};
use crate::data::{Column, FeatureSchema};
use crate::error::{Error, Result};
use crate::interactions::{Fim, FimKind, FimSpec};
use crate::params::{he_uniform, uniform, ParamStore};
use crate::scalar::Scalar;

/// Half-width of the uniform embedding initializer.
pub const EMBEDDING_INIT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetOwner {
    Shared,
    Task(String),
}

impl SetOwner {
    pub fn name(&self) -> &str {
        match self {
            SetOwner::Shared => "shared",
            SetOwner::Task(t) => t,
        }
    }
}

impl std::fmt::Display for SetOwner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// An MFI set, or the expert list of a baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleSet {
    pub owner: SetOwner,
    pub modules: Vec<Fim>,
}

/// One gate input: module `module` of set `set`, optionally scaled by a task prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub set: usize,
    pub module: usize,
    pub scaled_by: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateRole {
    /// Over the task's own set.
    Own,
    /// Over the preceding task's set and the shared set.
    Other,
    /// A single MMoE/CGC-style gate.
    Mix,
}

impl GateRole {
    pub fn as_str(self) -> &'static str {
        match self {
            GateRole::Own => "own",
            GateRole::Other => "other",
            GateRole::Mix => "mix",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDef {
    pub prefix: String,
    pub task: usize,
    pub role: GateRole,
    pub candidates: Vec<Candidate>,
    pub selector_width: usize,
    pub bias: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TowerPart {
    Gate(usize),
    Module { set: usize, module: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDef {
    pub name: String,
    pub preceding: Option<usize>,
    pub tsn: TsnConfig,
    /// Concatenated, in order, to form the tower input.
    pub inputs: Vec<TowerPart>,
    pub tower: Fim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingDef {
    pub feature: String,
    pub prefix: String,
    /// Vocabulary size, or 1 for a continuous feature's projection row.
    pub rows: usize,
    pub dim: usize,
    pub categorical: bool,
}

/// Everything about a model except its parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub kind: Architecture,
    pub output_dim: usize,
    pub input_width: usize,
    pub embeddings: Vec<EmbeddingDef>,
    pub stack: Option<Fim>,
    pub sets: Vec<ModuleSet>,
    pub gates: Vec<GateDef>,
    pub tasks: Vec<TaskDef>,
}

/// A built multi-task network with its parameters.
#[derive(Debug, Clone)]
pub struct ModelGraph<S: Scalar> {
    pub graph: Graph,
    pub config: ModelConfig,
    pub schema: Arc<FeatureSchema>,
    pub params: ParamStore<S>,
}

fn module_prefix(owner: &SetOwner, j: usize) -> String {
    match owner {
        SetOwner::Shared => format!("shared.m{j}"),
        SetOwner::Task(t) => format!("task.{t}.m{j}"),
    }
}

impl Graph {
    pub fn set_index(&self, owner: &SetOwner) -> Option<usize> {
        self.sets.iter().position(|s| &s.owner == owner)
    }

    pub fn module(&self, set: usize, module: usize) -> &Fim {
        &self.sets[set].modules[module]
    }

    pub fn module_count(&self) -> usize {
        self.sets.iter().map(|s| s.modules.len()).sum::<usize>() + usize::from(self.stack.is_some())
    }

    pub fn gate_count(&self) -> usize {
        self.gates.len()
    }

    /// Width of the concatenated tower input of `task`.
    pub fn tower_input_width(&self, task: usize) -> usize {
        self.parts_width(&self.tasks[task].inputs)
    }

    fn parts_width(&self, parts: &[TowerPart]) -> usize {
        parts
            .iter()
            .map(|p| match p {
                TowerPart::Gate(_) => self.output_dim,
                TowerPart::Module { set, module } => self.module(*set, *module).output_dim,
            })
            .sum()
    }

    /// Parameters owned by modules (stack included).
    pub fn module_parameter_count(&self) -> usize {
        self.sets
            .iter()
            .flat_map(|s| &s.modules)
            .chain(self.stack.as_ref())
            .map(Fim::parameter_count)
            .sum()
    }

    /// Exact scalar count of the model.
    pub fn parameter_count(&self) -> usize {
        let emb: usize = self.embeddings.iter().map(|e| e.rows * e.dim).sum();
        let gates: usize = self
            .gates
            .iter()
            .map(|g| g.candidates.len() * (g.selector_width + usize::from(g.bias)))
            .sum();
        let towers: usize = self.tasks.iter().map(|t| t.tower.parameter_count()).sum();
        emb + gates + towers + self.module_parameter_count()
    }

    /// Asserts the architecture's wiring laws.
    pub fn check_structure(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Build(m));
        for (g, gate) in self.gates.iter().enumerate() {
            if gate.candidates.is_empty() {
                return fail(format!("gate `{}` has no candidates", gate.prefix));
            }
            for c in &gate.candidates {
                if c.set >= self.sets.len() || c.module >= self.sets[c.set].modules.len() {
                    return fail(format!("gate {g} references a missing module"));
                }
                if let Some(s) = c.scaled_by {
                    if s >= gate.task {
                        return fail(format!("gate `{}` scales by a later task", gate.prefix));
                    }
                }
            }
        }
        for set in &self.sets {
            if set.modules.iter().any(|m| m.output_dim != self.output_dim) {
                return fail(format!("set `{}` mixes output widths", set.owner));
            }
        }
        for (t, task) in self.tasks.iter().enumerate() {
            if task.preceding.is_some_and(|p| p >= t) {
                return fail(format!("task `{}` precedes itself", task.name));
            }
            if task.tower.input_width != self.tower_input_width(t) {
                return fail(format!("tower of `{}` has the wrong input width", task.name));
            }
        }
        match self.kind {
            Architecture::SharedBottom => {
                if !self.gates.is_empty() || self.sets.len() != 1 || self.sets[0].modules.len() != 1 {
                    return fail("shared_bottom needs exactly one shared trunk and no gates".into());
                }
            }
            Architecture::Mmoe | Architecture::Sfm => {
                if self.gates.len() != self.tasks.len() || self.sets.len() != 1 {
                    return fail(format!("{} needs one shared expert set and one gate per task", self.kind));
                }
                if (self.kind == Architecture::Sfm) != self.stack.is_some() {
                    return fail("only sfm has an interaction stack".into());
                }
            }
            Architecture::Ple | Architecture::Tfi | Architecture::Dtn => {
                if self.sets.len() != self.tasks.len() + 1 {
                    return fail(format!("{} needs a shared set plus one set per task", self.kind));
                }
                if self.sets.iter().any(|s| s.modules.is_empty()) {
                    return fail(format!("{} has an empty module set", self.kind));
                }
                let per_task = if self.kind == Architecture::Dtn { 2 } else { 1 };
                if self.gates.len() != per_task * self.tasks.len() {
                    return fail(format!("{} needs {per_task} gate(s) per task", self.kind));
                }
                if self.kind == Architecture::Dtn {
                    for t in 0..self.tasks.len() {
                        if self.tower_input_width(t) != 2 * self.output_dim {
                            return fail(format!("dtn tower of `{}` must read 2 × output_dim", self.tasks[t].name));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

struct Plan {
    stack: Option<FimSpec>,
    sets: Vec<(SetOwner, Vec<FimSpec>)>,
}

fn plan(config: &ModelConfig, schema: &FeatureSchema) -> Result<Plan> {
    let shared = config.shared_modules.clone().unwrap_or_default();
    let mut sets = vec![(SetOwner::Shared, shared)];
    for key in config.task_module_overrides.keys() {
        if schema.task_index(key).is_none() {
            return Err(Error::UnknownTask(key.clone()));
        }
    }
    if config.kind.has_task_sets() {
        for t in &schema.tasks {
            let specs = config
                .task_module_overrides
                .get(t)
                .cloned()
                .unwrap_or_else(|| config.task_modules.clone().unwrap_or_default());
            if specs.is_empty() {
                return Err(Error::Build(format!(
                    "{} needs at least one task-specific module for `{t}`",
                    config.kind
                )));
            }
            sets.push((SetOwner::Task(t.clone()), specs));
        }
    } else if config.task_modules.as_ref().is_some_and(|m| !m.is_empty()) || !config.task_module_overrides.is_empty() {
        return Err(Error::Build(format!("{} has no task-specific modules", config.kind)));
    }
    if sets[0].1.is_empty() {
        return Err(Error::Build(format!("{} needs at least one shared module", config.kind)));
    }
    if config.stack.is_some() && config.kind != Architecture::Sfm {
        return Err(Error::Build(format!("{} takes no interaction stack", config.kind)));
    }
    for (_, specs) in &sets {
        for s in specs.iter().chain(config.stack.as_ref()) {
            if s.output_dim != config.output_dim {
                return Err(Error::Build(format!(
                    "{} module has output_dim {}, model uses {}",
                    s.kind, s.output_dim, config.output_dim
                )));
            }
        }
    }
    Ok(Plan {
        stack: config.stack.clone(),
        sets,
    })
}

fn assemble(config: &ModelConfig, schema: &FeatureSchema, plan: &Plan, module_budget: Option<usize>) -> Result<Graph> {
    let out = config.output_dim;
    let with_budget = |spec: &FimSpec| {
        let mut s = spec.clone();
        if s.parameter_budget.is_none() {
            s.parameter_budget = module_budget;
        }
        s
    };

    let embeddings: Vec<EmbeddingDef> = schema
        .features
        .iter()
        .map(|f| EmbeddingDef {
            feature: f.name.clone(),
            prefix: format!("emb.{}", f.name),
            rows: f.vocab_size().unwrap_or(1),
            dim: f.embedding_dim,
            categorical: f.is_categorical(),
        })
        .collect();
    let input_width = schema.input_width();

    let stack = plan
        .stack
        .as_ref()
        .map(|s| Fim::resolve(&with_budget(s), input_width, Some(schema), "stack"))
        .transpose()?;
    let expert_width = stack.as_ref().map_or(input_width, |s| s.output_dim);

    let mut sets = Vec::new();
    for (owner, specs) in &plan.sets {
        let modules = specs
            .iter()
            .enumerate()
            .map(|(j, s)| Fim::resolve(&with_budget(s), expert_width, Some(schema), &module_prefix(owner, j)))
            .collect::<Result<Vec<_>>>()?;
        sets.push(ModuleSet {
            owner: owner.clone(),
            modules,
        });
    }

    let all = |set: usize, scaled_by: Option<usize>| -> Vec<Candidate> {
        (0..sets[set].modules.len())
            .map(|module| Candidate { set, module, scaled_by })
            .collect()
    };
    let selector_width = expert_width;
    let mut gates = Vec::new();
    let mut task_inputs = Vec::new();
    for (t, name) in schema.tasks.iter().enumerate() {
        let mut gate = |role: GateRole, candidates: Vec<Candidate>| {
            gates.push(GateDef {
                prefix: format!("gate.{name}.{}", role.as_str()),
                task: t,
                role,
                candidates,
                selector_width,
                bias: config.gate_bias,
            });
            TowerPart::Gate(gates.len() - 1)
        };
        let inputs = match config.kind {
            Architecture::SharedBottom => vec![TowerPart::Module { set: 0, module: 0 }],
            Architecture::Mmoe | Architecture::Sfm => vec![gate(GateRole::Mix, all(0, None))],
            Architecture::Ple | Architecture::Tfi => {
                let mut c = all(1 + t, None);
                c.extend(all(0, None));
                vec![gate(GateRole::Mix, c)]
            }
            Architecture::Dtn => {
                let mut other = Vec::new();
                if let Some(p) = schema.preceding(t) {
                    let scale = config.tsn_for(name).enabled.then_some(p);
                    other.extend(all(1 + p, scale));
                }
                other.extend(all(0, None));
                let other = gate(GateRole::Other, other);
                let own = gate(GateRole::Own, all(1 + t, None));
                vec![other, own]
            }
        };
        task_inputs.push(inputs);
    }

    let mut graph = Graph {
        kind: config.kind,
        output_dim: out,
        input_width,
        embeddings,
        stack,
        sets,
        gates,
        tasks: Vec::new(),
    };
    if config.kind == Architecture::SharedBottom && graph.sets[0].modules.len() != 1 {
        return Err(Error::Build("shared_bottom takes exactly one shared trunk".into()));
    }
    if config.tower_hidden.contains(&0) {
        return Err(Error::Build("tower widths must be positive".into()));
    }
    for (t, inputs) in task_inputs.into_iter().enumerate() {
        let name = schema.tasks[t].clone();
        let mut spec = FimSpec::new(FimKind::Mlp).with_output_dim(1);
        spec.hidden = Some(config.tower_hidden.clone());
        let tower = Fim::resolve(&spec, graph.parts_width(&inputs), None, &format!("tower.{name}"))?;
        graph.tasks.push(TaskDef {
            preceding: schema.preceding(t),
            tsn: config.tsn_for(&name),
            name,
            inputs,
            tower,
        });
    }
    Ok(graph)
}

impl<S: Scalar> ModelGraph<S> {
    /// Builds and initializes a model for `schema`.
    pub fn build(config: &ModelConfig, schema: &FeatureSchema, seed: u64) -> Result<Self> {
        let schema = match &config.task_dependencies {
            Some(deps) => schema.clone().with_dependencies(deps.clone())?,
            None => schema.clone(),
        };
        let config = config.resolved(schema.tasks.len());
        if config.output_dim == 0 {
            return Err(Error::Build("output_dim must be positive".into()));
        }
        for task in config.tsn_overrides.keys() {
            if schema.task_index(task).is_none() {
                return Err(Error::UnknownTask(task.clone()));
            }
        }
        let plan = plan(&config, &schema)?;
        let mut graph = assemble(&config, &schema, &plan, None)?;
        if let Some(budget) = config.parameter_budget {
            let fixed = graph.parameter_count() - graph.module_parameter_count();
            if budget <= fixed {
                return Err(Error::Build(format!(
                    "parameter budget {budget} does not cover the {fixed} parameters of embeddings, gates and towers"
                )));
            }
            let per_module = (budget - fixed) / graph.module_count();
            graph = assemble(&config, &schema, &plan, Some(per_module))?;
        }
        graph.check_structure()?;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for e in &graph.embeddings {
            params.insert(e.prefix.clone(), uniform(e.rows, e.dim, EMBEDDING_INIT, &mut rng))?;
        }
        for fim in graph.stack.iter().chain(graph.sets.iter().flat_map(|s| &s.modules)) {
            fim.init(&mut params, &mut rng)?;
        }
        for g in &graph.gates {
            params.insert(format!("{}.w", g.prefix), he_uniform(g.selector_width, g.candidates.len(), &mut rng))?;
            if g.bias {
                params.insert(format!("{}.b", g.prefix), Array2::zeros((1, g.candidates.len())))?;
            }
        }
        for t in &graph.tasks {
            t.tower.init(&mut params, &mut rng)?;
        }
        debug_assert_eq!(params.scalar_count(), graph.parameter_count());
        Ok(Self {
            graph,
            config,
            schema: Arc::new(schema),
            params,
        })
    }

    pub fn kind(&self) -> Architecture {
        self.graph.kind
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn n_tasks(&self) -> usize {
        self.graph.tasks.len()
    }

    /// Same model with parameters converted to another precision.
    pub fn cast<T: Scalar>(&self) -> ModelGraph<T> {
        ModelGraph {
            graph: self.graph.clone(),
            config: self.config.clone(),
            schema: self.schema.clone(),
            params: self.params.cast(),
        }
    }

    /// Categorical-id column read by embedding `e`.
    pub(crate) fn column(&self, e: usize) -> Column {
        self.schema.column(e)
    }
}
