//! Config-driven experiment runner for the multi-task models in `dtn-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

pub use commands::{run, Command, Invocation};
pub use config::{load_config, parse_config, ExperimentConfig};
pub use error::{CliError, Result};
pub use report::{compare_runs, MetricRow, RunInfo};
