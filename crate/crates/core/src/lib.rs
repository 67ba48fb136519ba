//! Laplace-approximated feedforward networks with LULA units.
//!
//! A MAP-trained network is wrapped in a Gaussian posterior built from
//! generalized Gauss-Newton curvature. LULA units are extra hidden units whose
//! outgoing weights are fixed at zero: they never change the network's
//! predictions but they do change the curvature, so training their incoming
//! weights tunes the predictive uncertainty after the fact.
//!
//! Modules, bottom up:
//!
//! - [`numerics`]: dense matrices, Cholesky, Kronecker products, seeded RNG.
//! - [`network`]: layers, forward/backward passes, Jacobians, model files.
//! - [`training`]: MAP losses and first-order optimizers.
//! - [`laplace`]: curvature, posteriors, predictive approximations.
//! - [`lula`]: augmentation, the variance objective, masked training.
//! - [`data`]: toy generators, OOD synthesis, CSV ingestion, splits.
//! - [`metrics`]: MMC, AUROC, Brier.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod laplace;
pub mod lula;
pub mod metrics;
pub mod network;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Matrix, Rng};
