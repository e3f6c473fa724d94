//! Adaptive white-box attacks.
//!
//! [`run_whitebox`] attacks the two-criterion detector with the combined
//! loss `λ·L1 + L2 + L3 + L4`:
//!
//! * L1: cross-entropy against `p_adv`, the clean distribution with the
//!   source and target probabilities swapped.
//! * L2: expected L1 change of the prediction under Gaussian noise.
//! * L3: loss after one simulated detector step towards a random class.
//! * L4: negated loss after one simulated step away from the target.
//!
//! The inner gradients of L3 and L4 are held constant on the backward pass.
//! [`whitebox_vs_feature_squeezing`] and [`whitebox_vs_artifacts`] attack
//! the two baseline detectors.

mod baselines;
mod losses;
mod whitebox;

pub use baselines::{whitebox_vs_artifacts, whitebox_vs_feature_squeezing, ArtifactsAttackConfig, SqueezeAttackConfig};
pub use losses::{bpda_gradient, loss_l1, loss_l2, loss_l3, loss_l4, Objective};
pub(crate) use baselines::{artifacts_objective, squeeze_objective};
pub(crate) use losses::{loss_l2_with_noise, loss_l3_with_classes, objective_with, Draws};
pub use whitebox::{escalate_lambda, run_whitebox, run_whitebox_snapshots, LambdaSearch, LossTrace, WhiteboxResult};

use serde::{Deserialize, Serialize};

use crate::attacks::{project_in_place, AdamState};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossTerm {
    L1,
    L2,
    L3,
    L4,
}

/// Defense-agnostic loss underlying L1, L3 and L4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseLoss {
    PgdCe,
    CwMargin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WhiteboxConfig {
    pub lambda: f64,
    /// Step size of the simulated detector step in L3 and L4.
    pub alpha: f64,
    pub lr: f64,
    pub steps: usize,
    pub tau: f64,
    /// Noise level of L2; should match the detector's.
    pub sigma: f64,
    pub noise_samples: usize,
    pub class_samples: usize,
    pub losses: Vec<LossTerm>,
    pub base_loss: BaseLoss,
    pub kappa: f64,
    pub seed: u64,
}

impl Default for WhiteboxConfig {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            alpha: 0.005,
            lr: 0.01,
            steps: 50,
            tau: 0.1,
            sigma: 0.1,
            noise_samples: 1,
            class_samples: 1,
            losses: vec![LossTerm::L1, LossTerm::L2, LossTerm::L3, LossTerm::L4],
            base_loss: BaseLoss::PgdCe,
            kappa: 0.0,
            seed: 0,
        }
    }
}

impl WhiteboxConfig {
    /// Optimizes L1 only: an attacker unaware of the detector.
    pub fn gray_box(lr: f64, steps: usize, tau: f64) -> Self {
        Self {
            lr,
            steps,
            tau,
            losses: vec![LossTerm::L1],
            ..Self::default()
        }
    }

    pub fn enabled(&self, term: LossTerm) -> bool {
        self.losses.contains(&term)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.lambda > 0.0) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.lr > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.steps == 0 {
            return bad("attack needs at least one step".into());
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if !(self.sigma >= 0.0) {
            return bad(format!("sigma must be >= 0, got {}", self.sigma));
        }
        if self.noise_samples == 0 || self.class_samples == 0 {
            return bad("Monte Carlo sample counts must be at least 1".into());
        }
        if !self.enabled(LossTerm::L1) {
            return bad("L1 must always be enabled".into());
        }
        if self.kappa < 0.0 {
            return bad(format!("kappa must be >= 0, got {}", self.kappa));
        }
        Ok(())
    }
}

/// Clean distribution with the source and target entries swapped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PadvVector {
    pub probs: Vec<f64>,
    pub source: usize,
    pub target: usize,
}

pub fn make_p_adv(probs: &[f64], source: usize, target: usize) -> Result<PadvVector> {
    let c = probs.len();
    for label in [source, target] {
        if label >= c {
            return Err(Error::InvalidLabel { label, classes: c });
        }
    }
    if source == target {
        return Err(Error::InvalidConfig(format!("source and target are both {source}")));
    }
    let mut swapped = probs.to_vec();
    swapped.swap(source, target);
    Ok(PadvVector {
        probs: swapped,
        source,
        target,
    })
}

/// Adam on `objective` with L-infinity/box projection. Returns the final
/// iterate, the first step at which `done` held, and the iterates after
/// each step listed in `snapshots`.
pub(crate) fn descend(
    x: &Tensor,
    lr: f64,
    steps: usize,
    tau: f64,
    snapshots: &[usize],
    mut done: impl FnMut(&Tensor) -> Result<bool>,
    mut objective: impl FnMut(&Tensor, usize) -> Result<(f64, Vec<f64>)>,
) -> Result<(Tensor, Option<usize>, Vec<Tensor>)> {
    let origin = x.clone();
    let mut xa = x.clone();
    let mut adam = AdamState::new(x.len());
    let mut first = None;
    let mut kept = Vec::new();
    if snapshots.contains(&0) {
        kept.push(xa.clone());
    }
    for step in 1..=steps {
        if first.is_none() && done(&xa)? {
            first = Some(step - 1);
        }
        let (value, grad) = objective(&xa, step)?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { step });
        }
        adam.step(xa.data_mut(), &grad, lr);
        project_in_place(xa.data_mut(), origin.data(), tau);
        if snapshots.contains(&step) {
            kept.push(xa.clone());
        }
    }
    if first.is_none() && done(&xa)? {
        first = Some(steps);
    }
    Ok((xa, first, kept))
}
