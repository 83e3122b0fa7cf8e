//! Training and measuring toy in-context learners: layerwise task-vector
//! geometry, probes, and a linear-attention variance check.

pub mod autodiff;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod io;
pub mod model;
pub mod probes;
pub mod registry;
pub mod rng;
pub mod taskgen;
pub mod theorem;
pub mod training;

pub use error::{Error, Result};
