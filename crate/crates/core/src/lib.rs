//! Predictive models, honest causal forests and counterfactual mediation
//! analysis for harmonized survey tables.

pub mod classify;
pub mod error;
pub mod forest;
pub mod hetero;
pub mod mediate;
pub mod registry;
pub mod regress;
pub mod rng;
pub mod stats;
pub mod tabular;

pub use error::{Error, Result};
