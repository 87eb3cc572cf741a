//! Nested dyadic random walks, exact lattice self-intersection local times,
//! discrete conservative fields and discrete stochastic-calculus identities.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimator;
pub mod fields;
pub mod formulas;
pub mod grid;
pub mod harness;
pub mod occupancy;
pub mod oracles;
pub mod quadrature;
pub mod rng;
pub mod summation;
pub mod walk;

pub use error::{Error, Result};
