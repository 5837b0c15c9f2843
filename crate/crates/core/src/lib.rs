//! Geometrically parameterized RVE homogenization: full-order finite-strain
//! FE solver on a morphed parent domain, a POD + empirical cubature
//! surrogate built from its snapshots, and an FE² driver using either.

pub mod cli;
pub mod config;
pub mod ecm;
pub mod error;
pub mod geometry;
pub mod material;
pub mod mesh;
pub mod microfem;
pub mod morph;
pub mod offline;
pub mod podkit;
pub mod rom;
pub mod sparse;
pub mod store;
pub mod tensor;
pub mod twoscale;

pub use error::{Error, Result};
