//! Core of the holograph causal-discovery engine.
//!
//! Local causal beliefs are linear SEMs over variable subsets (sections of a
//! presheaf); restriction between subsets is algebraic latent projection.
//! The crate covers the projection itself, the presheaf axiom checks and
//! gluing, the coherence objective and its gradient, natural-gradient
//! fitting, active query selection against a pluggable oracle, and the graph
//! generators and structural metrics used to benchmark it.
//!
//! Everything here is `no_std` + `alloc`; file formats, the HTTP oracle and
//! the CLI live in the `holograph` crate.

#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod causal_model;
pub mod error;
pub mod experiment;
pub mod generators;
pub mod latent_projection;
pub mod linalg;
pub mod metrics;
pub mod objective;
pub mod optimizer;
pub mod query;
pub mod sheaf;
pub mod stats;

pub use causal_model::{new_state, BinaryGraph, CausalState, Context};
pub use error::{Error, Result};
