//! Regularized M-estimation under Gaussian designs with exact and
//! approximate leave-one-out risk estimates.
//!
//! The estimator is `b_hat = argmin_b sum_i L_{y_i}(x_i' b) + R(b)` for a
//! convex loss and a strongly convex penalty (ridge, elastic-net or
//! group-lasso). From a certified fit the crate builds the curvature matrix
//! `A_hat`, the approximate leave-one-out (ALO) estimate, the mean-field
//! correction with weight `tr[Σ A_hat]`, and the diagnostics comparing the
//! per-observation ALO weights with that single weight.

pub mod checks;
pub mod curvature;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod risk;
pub mod solver;

pub use error::{Error, Result};
pub use model::{Dataset, FitResult, LossSpec, PenaltyFamily, PenaltySpec, TestFunction};
pub use solver::SolverConfig;
