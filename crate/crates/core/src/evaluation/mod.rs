//! Metrics, RelaImpr and permutation feature importance.

pub mod importance;
pub mod metrics;

pub use importance::{fi_report, permutation_feature_importance, FiReport, DEFAULT_REPEATS};
pub use metrics::{auc, average_ranks, logloss, pearson, rela_impr, spearman};
