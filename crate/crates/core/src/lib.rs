//! Unbiased estimation of log marginal likelihoods for latent variable models.
//!
//! The estimator at the centre of this crate applies Russian-roulette
//! randomized truncation to the telescoping series formed by consecutive
//! importance-weighted bounds `IWAE_1, IWAE_2, ...`. The result is an
//! unbiased estimate of `log p(x)` whose gradients are unbiased estimates of
//! the score function.
//!
//! Module map:
//!
//! - [`numerics`]: log-space primitives and the cumulative IWAE ladder.
//! - [`autodiff`]: a small reverse-mode tape over dense tensors.
//! - [`trunc`]: truncation distributions over the roulette index `K`.
//! - [`estimators`]: Russian roulette, ELBO/IWAE, SUMO and its gradients.
//! - [`models`]: the latent-variable-model interface and concrete models.
//! - [`qpbo`]: pseudo-Boolean instances, exact oracle and policies.
//! - [`training`]: optimizers, clipping and the training loops.
//! - [`data`]: synthetic Bernoulli-mixture data and binary CSV loading.

// `!(x > 0.0)` style checks are used on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod error;
pub mod estimators;
pub mod models;
pub mod numerics;
pub mod qpbo;
pub mod rng;
pub mod stats;
pub mod training;
pub mod trunc;

pub use error::{Error, Result};
