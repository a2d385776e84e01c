//! Differentially private estimation of smooth optimal transport maps.
//!
//! Candidate Brenier potentials are stored on a uniform grid, scored by a
//! clamped empirical semi-dual objective, and one is selected by
//! report-noisy-argmin with Laplace noise. The fitted map is the
//! finite-difference gradient of the selected potential.

pub mod candidates;
pub mod cli;
pub mod config;
pub mod covering;
pub mod dp;
pub mod error;
pub mod estimator;
pub mod grid;
pub mod metrics;
pub mod models;
pub mod semidual;

pub use error::{Error, Result};
