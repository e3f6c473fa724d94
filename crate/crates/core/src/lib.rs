//! Adversarial-image detection from the geometry of adversarial
//! perturbations around natural images.
//!
//! A natural image is robust to random Gaussian noise (criterion C1) yet
//! sits a few gradient steps away from the decision boundary of every other
//! class (criteria C2t and C2u). Adversarial images tend to fail one of the
//! two tests, and an adaptive attacker who optimizes against both faces a
//! trade-off between them.
//!
//! Modules:
//! - [`diffnet`]: a small differentiable classifier with exact input gradients.
//! - [`attacks`]: PGD / CW style attacks and the step counter used by C2.
//! - [`detector`]: the statistics `(Δ, K_t, K_u)`, calibration, verdicts.
//! - [`adaptive`]: white-box attacks against the detector and the baselines.
//! - [`baselines`]: Feature Squeezing and Artifacts (density + uncertainty).
//! - [`data`]: IDX ingestion, synthetic blobs, splits and pass sets.
//! - [`harness`]: attack grids, detection tables, curves, trends, timing.
//! - [`config`]: the experiment JSON with dotted-key overrides.

pub mod adaptive;
pub mod attacks;
mod clock;
pub mod baselines;
pub mod config;
pub mod data;
pub mod detector;
pub mod diffnet;
pub mod error;
pub mod harness;
mod par;
pub mod rng;
pub mod tensor;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use tensor::Tensor;
