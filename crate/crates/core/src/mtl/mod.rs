//! Multi-task architectures: Shared-Bottom, MMoE, PLE, SFM, TFI and DTN.
//!
//! All six share one representation: module sets (shared or task-owned),
//! softmax gates over candidate modules, and per-task towers. DTN gives each
//! task an own-set gate and an other gate whose candidates from the preceding
//! task's set are scaled by that task's prediction.

pub mod checkpoint;
pub mod config;
pub mod export;
pub mod forward;
pub mod gates;
pub mod graph;
pub mod trim;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use config::{Architecture, ModelConfig, TsnConfig};
pub use export::{ModuleSelector, RepresentationExport, SetSelector};
pub use forward::{gate_forward, gate_mix, ForwardOptions, ForwardOutput, Pass};
pub use gates::{write_gate_weights_csv, CandidateInfo, GateWeights};
pub use graph::{Candidate, GateDef, GateRole, Graph, ModelGraph, ModuleSet, SetOwner, TaskDef, TowerPart};
pub use trim::{RemovedModule, TrimReport, TrimRule};

#[cfg(test)]
mod tests;
