//! Fractional Laplacian, its degenerate-elliptic extension, fractional
//! capacity and moving-sphere probes for singular solutions.

// `!(a > b)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod capacity;
pub mod cli;
pub mod conformal;
pub mod constants;
pub mod error;
pub mod extension;
pub mod fraclap;
pub mod lattice;
pub mod probes;
pub mod quad;
pub mod solver;
pub mod spectral;
pub mod suite;

pub use constants::{Constants, FracParams};
pub use error::{Error, Result};
