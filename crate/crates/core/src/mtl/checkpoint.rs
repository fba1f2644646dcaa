use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{Architecture, ModelConfig};
use super::graph::{Graph, ModelGraph};
use crate::data::FeatureSchema;
use crate::error::{Error, Result};
use crate::params::{ParamBlock, ParamStore};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "dtn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Self-describing model file: structure, config echo and named parameter blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub scalar: String,
    pub architecture: Architecture,
    pub config: ModelConfig,
    pub schema: FeatureSchema,
    pub graph: Graph,
    pub params: Vec<ParamBlock>,
    /// Free-form run information (dataset fingerprint, epoch, …).
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl<S: Scalar> ModelGraph<S> {
    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            scalar: S::NAME.into(),
            architecture: self.graph.kind,
            config: self.config.clone(),
            schema: (*self.schema).clone(),
            graph: self.graph.clone(),
            params: self.params.to_blocks(),
            meta,
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        ck.schema.validate()?;
        ck.graph.check_structure()?;
        let params: ParamStore<S> = ParamStore::from_blocks(ck.params)?;
        if params.scalar_count() != ck.graph.parameter_count() {
            return Err(Error::Checkpoint(format!(
                "parameter blocks hold {} scalars, structure needs {}",
                params.scalar_count(),
                ck.graph.parameter_count()
            )));
        }
        Ok(Self {
            graph: ck.graph,
            config: ck.config,
            schema: Arc::new(ck.schema),
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: serde_json::Value) -> Result<()> {
        write_checkpoint(&self.to_checkpoint(meta), path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(read_checkpoint(path)?)
    }
}

pub fn write_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(ck).map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}
