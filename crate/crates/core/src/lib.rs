//! Multi-task CTR/CVR models with task-specific feature-interaction modules.
//!
//! The core is generic over the floating-point type ([`Scalar`]); the aliases
//! below fix it for the common cases.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod interactions;
pub mod mtl;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ModelGraph32 = mtl::ModelGraph<f32>;
pub type ModelGraph64 = mtl::ModelGraph<f64>;
pub type FimState32 = interactions::FimState<f32>;
pub type FimState64 = interactions::FimState<f64>;
pub type ParamStore32 = params::ParamStore<f32>;
pub type ParamStore64 = params::ParamStore<f64>;
