use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::forward::ForwardOptions;
use super::graph::ModelGraph;
use crate::data::permutation;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::interactions::FimKind;
use crate::scalar::Scalar;

/// Which module(s) of a set to export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleSelector {
    Index(usize),
    /// Every module of this kind in the set.
    Kind(FimKind),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetSelector {
    /// `shared` or a task name.
    pub owner: String,
    pub module: ModuleSelector,
}

impl std::str::FromStr for SetSelector {
    type Err = Error;

    /// Parses `owner:index` or `owner:kind`.
    fn from_str(s: &str) -> Result<Self> {
        let (owner, module) = s
            .split_once(':')
            .ok_or_else(|| Error::Other(format!("selector `{s}` is not `owner:module`")))?;
        let module = match module.parse::<usize>() {
            Ok(i) => ModuleSelector::Index(i),
            Err(_) => ModuleSelector::Kind(module.parse()?),
        };
        Ok(Self {
            owner: owner.to_string(),
            module,
        })
    }
}

/// Output vectors of selected modules for sampled examples.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationExport<S> {
    /// Dataset rows, in sampling order.
    pub examples: Vec<usize>,
    /// One block per selected module: `(owner, module index, kind, [samples × output_dim])`.
    pub blocks: Vec<(String, usize, FimKind, Array2<S>)>,
}

impl<S: Scalar> ModelGraph<S> {
    /// Exports module outputs of `sample_count` rows drawn without replacement.
    pub fn export_representations(
        &self,
        data: &Dataset,
        selectors: &[SetSelector],
        sample_count: usize,
        seed: u64,
    ) -> Result<RepresentationExport<S>> {
        if sample_count > data.len() {
            return Err(Error::Other(format!(
                "cannot sample {sample_count} of {} examples",
                data.len()
            )));
        }
        let mut targets = Vec::new();
        for sel in selectors {
            let s = self
                .graph
                .sets
                .iter()
                .position(|set| set.owner.name() == sel.owner)
                .ok_or_else(|| Error::Other(format!("no module set owned by `{}`", sel.owner)))?;
            let modules = &self.graph.sets[s].modules;
            let picked: Vec<usize> = match sel.module {
                ModuleSelector::Index(i) if i < modules.len() => vec![i],
                ModuleSelector::Index(i) => {
                    return Err(Error::Other(format!("set `{}` has no module {i}", sel.owner)));
                }
                ModuleSelector::Kind(k) => (0..modules.len()).filter(|&i| modules[i].kind() == k).collect(),
            };
            if picked.is_empty() {
                return Err(Error::Other(format!("set `{}` has no module matching {:?}", sel.owner, sel.module)));
            }
            targets.extend(picked.into_iter().map(|m| (s, m)));
        }
        let examples: Vec<usize> = permutation(data.len(), seed).into_iter().take(sample_count).collect();
        let out = self.forward_with(&data.select(&examples), &ForwardOptions::default())?;
        let blocks = targets
            .into_iter()
            .map(|(s, m)| {
                let owner = self.graph.sets[s].owner.name().to_string();
                (owner, m, self.graph.module(s, m).kind(), out.modules[s][m].clone())
            })
            .collect();
        Ok(RepresentationExport { examples, blocks })
    }
}

impl<S: Scalar> RepresentationExport<S> {
    /// Rows `owner,kind,module,example,v0..v{d-1}`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let width = self.blocks.first().map_or(0, |b| b.3.ncols());
        let mut out = Vec::new();
        let header: Vec<String> = ["owner", "kind", "module", "example"]
            .into_iter()
            .map(String::from)
            .chain((0..width).map(|i| format!("v{i}")))
            .collect();
        writeln!(out, "{}", header.join(",")).expect("vec write");
        for (owner, m, kind, values) in &self.blocks {
            for (row, ex) in values.rows().into_iter().zip(&self.examples) {
                write!(out, "{owner},{kind},{m},{ex}").expect("vec write");
                for v in row {
                    write!(out, ",{v}").expect("vec write");
                }
                writeln!(out).expect("vec write");
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Distance between the mean vectors of two blocks.
    pub fn centroid_distance(&self, a: usize, b: usize) -> f64 {
        let mean = |i: usize| self.blocks[i].3.mean_axis(ndarray::Axis(0)).expect("non-empty export");
        let (ma, mb) = (mean(a), mean(b));
        ma.iter()
            .zip(mb.iter())
            .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}
