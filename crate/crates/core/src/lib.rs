//! Empty-space mining for multivariate datasets.
//!
//! Lennard-Jones agents ([`esa`]) walk into the gaps between verified
//! configurations; [`projection`] provides the PCA overview and the
//! agent-centered neighbor embedding; [`pareto`] tracks the two-objective
//! front and its dominance area; [`surrogate`] learns the targets and, once
//! accurate enough, refines candidates by gradient ascent; [`pipeline`] ties
//! search, estimation and verification together across the three phases.

pub mod data;
pub mod density;
pub mod error;
pub mod esa;
pub mod experiments;
pub mod knn;
pub mod model;
pub mod oracles;
pub mod par;
pub mod pareto;
pub mod pipeline;
pub mod projection;
pub mod stats;
pub mod strategies;
pub mod surrogate;

pub use error::{Error, Result};
