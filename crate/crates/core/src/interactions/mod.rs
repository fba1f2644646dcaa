//! Feature-interaction modules (FIMs).
//!
//! Every module maps the concatenated input representation of a batch to a
//! `[batch × output_dim]` matrix, so any mix of kinds can be gate-weighted and
//! summed. MemoNet reads categorical ids instead of the embedded vector.

mod gdcn;
mod masknet;
mod memonet;
mod mlp;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::FeatureSchema;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

pub use gdcn::GdcnLayout;
pub use masknet::MaskNetLayout;
pub use memonet::MemoNetLayout;
pub use mlp::MlpLayout;

pub const DEFAULT_OUTPUT_DIM: usize = 512;
pub const DEFAULT_MASK_HIDDEN: usize = 640;
pub const DEFAULT_CODEBOOK_SIZE: usize = 1 << 14;
pub const DEFAULT_CODE_DIM: usize = 16;
pub const DEFAULT_MEMONET_FIELDS: usize = 8;
/// Allowed relative deviation from a parameter budget.
pub const BUDGET_TOLERANCE: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FimKind {
    Mlp,
    Gdcn,
    MaskNet,
    MemoNet,
}

impl FimKind {
    pub const ALL: [FimKind; 4] = [FimKind::Mlp, FimKind::Gdcn, FimKind::MaskNet, FimKind::MemoNet];

    pub fn as_str(self) -> &'static str {
        match self {
            FimKind::Mlp => "mlp",
            FimKind::Gdcn => "gdcn",
            FimKind::MaskNet => "masknet",
            FimKind::MemoNet => "memonet",
        }
    }
}

impl std::fmt::Display for FimKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FimKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FimKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Build(format!("unknown interaction kind `{s}`")))
    }
}

fn default_output_dim() -> usize {
    DEFAULT_OUTPUT_DIM
}

fn default_cross_layers() -> usize {
    2
}

fn default_codebook_size() -> usize {
    DEFAULT_CODEBOOK_SIZE
}

fn default_code_dim() -> usize {
    DEFAULT_CODE_DIM
}

/// Configuration of one feature-interaction module.
///
/// Kind-specific fields are ignored by other kinds. Optional sizes left unset
/// are chosen by the parameter-budget solver when a budget is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FimSpec {
    pub kind: FimKind,
    #[serde(default = "default_output_dim")]
    pub output_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter_budget: Option<usize>,
    /// MLP hidden widths.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    /// GDCN gated cross layers.
    #[serde(default = "default_cross_layers")]
    pub cross_layers: usize,
    /// GDCN low-rank factorization of the cross matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    /// MaskNet hidden/mask width.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_hidden: Option<usize>,
    /// MaskNet mask-generator bottleneck width.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_bottleneck: Option<usize>,
    /// MemoNet entries per hash codebook.
    #[serde(default = "default_codebook_size")]
    pub codebook_size: usize,
    /// MemoNet code vector width.
    #[serde(default = "default_code_dim")]
    pub code_dim: usize,
    /// MemoNet categorical fields whose pairs are crossed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields: Option<Vec<String>>,
    /// MemoNet explicit field pairs; overrides `fields`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<[String; 2]>>,
}

impl FimSpec {
    pub fn new(kind: FimKind) -> Self {
        Self {
            kind,
            output_dim: DEFAULT_OUTPUT_DIM,
            parameter_budget: None,
            hidden: None,
            cross_layers: default_cross_layers(),
            rank: None,
            mask_hidden: None,
            mask_bottleneck: None,
            codebook_size: DEFAULT_CODEBOOK_SIZE,
            code_dim: DEFAULT_CODE_DIM,
            fields: None,
            pairs: None,
        }
    }

    pub fn with_output_dim(mut self, dim: usize) -> Self {
        self.output_dim = dim;
        self
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.parameter_budget = Some(budget);
        self
    }
}

/// Resolved wiring of one module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FimLayout {
    Mlp(MlpLayout),
    Gdcn(GdcnLayout),
    MaskNet(MaskNetLayout),
    MemoNet(MemoNetLayout),
}

/// A built module: its wiring plus the prefix of its parameter blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fim {
    pub prefix: String,
    pub input_width: usize,
    pub output_dim: usize,
    pub layout: FimLayout,
}

/// Per-batch inputs a module may read.
pub struct FimInput<'a> {
    pub x: Var,
    pub categorical_ids: &'a Array2<usize>,
}

impl Fim {
    /// Resolves `spec` against an input width (and the schema, for MemoNet fields).
    pub fn resolve(spec: &FimSpec, input_width: usize, schema: Option<&FeatureSchema>, prefix: &str) -> Result<Self> {
        if spec.output_dim == 0 {
            return Err(Error::Build("output_dim must be positive".into()));
        }
        let layout = match spec.kind {
            FimKind::Mlp => FimLayout::Mlp(MlpLayout::resolve(spec, input_width)?),
            FimKind::Gdcn => FimLayout::Gdcn(GdcnLayout::resolve(spec, input_width)?),
            FimKind::MaskNet => FimLayout::MaskNet(MaskNetLayout::resolve(spec, input_width)?),
            FimKind::MemoNet => {
                let schema = schema.ok_or_else(|| Error::Build("memonet needs the feature schema".into()))?;
                FimLayout::MemoNet(MemoNetLayout::resolve(spec, schema)?)
            }
        };
        let fim = Self {
            prefix: prefix.to_string(),
            input_width,
            output_dim: spec.output_dim,
            layout,
        };
        if let Some(budget) = spec.parameter_budget {
            check_budget(fim.parameter_count(), budget, spec.kind)?;
        }
        Ok(fim)
    }

    pub fn kind(&self) -> FimKind {
        match self.layout {
            FimLayout::Mlp(_) => FimKind::Mlp,
            FimLayout::Gdcn(_) => FimKind::Gdcn,
            FimLayout::MaskNet(_) => FimKind::MaskNet,
            FimLayout::MemoNet(_) => FimKind::MemoNet,
        }
    }

    /// Exact number of learnable scalars.
    pub fn parameter_count(&self) -> usize {
        match &self.layout {
            FimLayout::Mlp(l) => l.parameter_count(),
            FimLayout::Gdcn(l) => l.parameter_count(self.input_width, self.output_dim),
            FimLayout::MaskNet(l) => l.parameter_count(self.input_width, self.output_dim),
            FimLayout::MemoNet(l) => l.parameter_count(self.output_dim),
        }
    }

    pub fn init<S: Scalar>(&self, store: &mut ParamStore<S>, rng: &mut ChaCha8Rng) -> Result<()> {
        match &self.layout {
            FimLayout::Mlp(l) => l.init(&self.prefix, store, rng),
            FimLayout::Gdcn(l) => l.init(&self.prefix, self.input_width, self.output_dim, store, rng),
            FimLayout::MaskNet(l) => l.init(&self.prefix, self.input_width, self.output_dim, store, rng),
            FimLayout::MemoNet(l) => l.init(&self.prefix, self.output_dim, store, rng),
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, input: &FimInput<'_>) -> Result<Var> {
        if !matches!(self.layout, FimLayout::MemoNet(_)) {
            let width = tape.shape(input.x).1;
            if width != self.input_width {
                return Err(Error::Shape(format!(
                    "{} `{}` expects input width {}, got {width}",
                    self.kind(),
                    self.prefix,
                    self.input_width
                )));
            }
        }
        let name = format!("{}:{}", self.prefix, self.kind());
        tape.scoped(&name, |tape| match &self.layout {
            FimLayout::Mlp(l) => l.forward(&self.prefix, tape, input.x),
            FimLayout::Gdcn(l) => l.forward(&self.prefix, tape, input.x),
            FimLayout::MaskNet(l) => l.forward(&self.prefix, tape, input.x),
            FimLayout::MemoNet(l) => l.forward(&self.prefix, tape, input.categorical_ids),
        })
    }
}

fn check_budget(count: usize, budget: usize, kind: FimKind) -> Result<()> {
    let dev = (count as f64 - budget as f64).abs() / budget as f64;
    if dev > BUDGET_TOLERANCE {
        return Err(Error::Build(format!(
            "{kind} realizes {count} parameters, more than {:.0}% away from budget {budget}",
            BUDGET_TOLERANCE * 100.0
        )));
    }
    Ok(())
}

/// Picks the candidate whose parameter count lies closest to `budget`.
fn closest<T>(budget: usize, candidates: impl IntoIterator<Item = (usize, T)>) -> Option<(usize, T)> {
    candidates
        .into_iter()
        .min_by_key(|(count, _)| count.abs_diff(budget))
}

/// A standalone module with its own parameters.
#[derive(Debug, Clone)]
pub struct FimState<S: Scalar> {
    pub fim: Fim,
    pub params: ParamStore<S>,
}

impl<S: Scalar> FimState<S> {
    pub fn build(spec: &FimSpec, input_width: usize, schema: Option<&FeatureSchema>, seed: u64) -> Result<Self> {
        let fim = Fim::resolve(spec, input_width, schema, "fim")?;
        let mut params = ParamStore::new();
        fim.init(&mut params, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self { fim, params })
    }

    pub fn parameter_count(&self) -> usize {
        self.fim.parameter_count()
    }

    pub fn forward(&self, x: &Array2<S>, categorical_ids: &Array2<usize>) -> Result<Array2<S>> {
        let mut tape = Tape::new(&self.params);
        let xv = tape.input(x.clone());
        let out = self.fim.forward(
            &mut tape,
            &FimInput {
                x: xv,
                categorical_ids,
            },
        )?;
        Ok(tape.value(out).clone())
    }

    pub fn all_finite(&self) -> bool {
        self.params.all_finite()
    }
}

#[cfg(test)]
mod tests;
