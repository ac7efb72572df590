//! Glauber dynamics of the Ising and hard-core models on rooted b-ary
//! trees: exact tree recursions, coupled event-driven simulation, spectral
//! diagnostics and desk-scale quench experiments.

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod gibbs;
pub mod hardcore;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod tree;

pub use error::{Error, Result};
