//! Numerical KAM normal-form machinery for coupled nonlinear Schrodinger
//! lattices on T^d with two tangential site sets.
//!
//! The crate builds the truncated Hamiltonian of the coupled system, solves
//! the block homological equations step by step, drives the quadratic
//! iteration with its domain schedule, samples resonant parameter sets, and
//! validates constructed quasi-periodic orbits by direct integration.

pub mod engine;
pub mod error;
pub mod linalg;
pub mod flow;
pub mod homological;
pub mod lattice;
pub mod measure;
pub mod model;
pub mod series;
pub mod testing;
pub mod toeplitz;
pub mod verify;

pub use error::{KamError, Result};
