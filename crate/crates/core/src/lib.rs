//! Distributionally robust chance-constrained Markov decision processes.
//!
//! The crate builds the occupation-measure polytope of a finite discounted MDP
//! and maximizes the reward level `y` that is guaranteed with confidence
//! `1 - epsilon` under moments-based, phi-divergence and Wasserstein ambiguity
//! sets. Every reformulation is emitted as a [`conic::ConeProgram`] and solved
//! through a single backend contract, so the same programs can be dumped,
//! inspected and re-solved.
//!
//! Independent worst-case oracles in [`validation`] and [`wasserstein`] check
//! the solver output without going through the conic reformulations.

// The dense PSD kernels of the backend need a BLAS/LAPACK provider; this pins
// it to the system OpenBLAS instead of building one from source.
use openblas_src as _;

pub mod ambiguity;
pub mod bench;
pub mod config;
pub mod conic;
pub mod error;
pub mod linalg;
pub mod mdp;
pub mod moments;
pub mod phi;
pub mod solution;
pub mod validation;
pub mod wasserstein;

pub use error::{Error, Result};
