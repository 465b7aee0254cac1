//! Physics-informed adversarial learning of correlated stochastic processes.
//!
//! - [`autodiff`]: scalar reverse-mode graph with nested differentiation.
//! - [`nn`]: tanh MLPs, Adam, and batched kernels for the training hot path.
//! - [`processes`]: Gaussian-process sampling, sensor layouts, snapshot files.
//! - [`elliptic`]: finite-difference oracle and Monte-Carlo references.
//! - [`gan`]: generators with induced differential operators, losses, training.
//! - [`metrics`]: exact W1, spectra, correlations, overfitting diagnostics.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod elliptic;
pub mod gan;
pub mod metrics;
pub mod nn;
pub mod processes;
