//! Dataset ingestion, synthetic generation, permutation and batching.

pub mod census;
pub mod dataset;
pub mod schema;
pub mod synthetic;

pub use census::{load_census_income, CensusOptions};
pub use dataset::{permutation, BatchIter, Dataset, ExampleBatch};
pub use schema::{Column, FeatureDef, FeatureKind, FeatureSchema, DEFAULT_EMBEDDING_DIM};
pub use synthetic::{generate_synthetic, GroundTruth, PairKind, SynFeature, SynKind, SynPair, SynTask, SyntheticSpec};
