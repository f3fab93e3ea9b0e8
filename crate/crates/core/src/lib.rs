//! Two-phase mold-filling simulation and a geometry-aware neural operator
//! surrogate trained on its trajectories.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod model;
pub mod solver;
pub mod training;

pub use error::{Error, Result};
