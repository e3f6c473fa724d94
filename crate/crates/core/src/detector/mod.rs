//! The two-criterion detector.
//!
//! * C1 measures `Δ`, the mean L1 change of the predicted distribution
//!   under Gaussian input noise. Large `Δ` is suspicious.
//! * C2t / C2u count the attack steps `K_t` / `K_u` needed to move the
//!   prediction to a random other class / away from the current class.
//!   Large `K` is suspicious.
//!
//! Thresholds come from clean data at a target false-positive rate; an
//! input is rejected when any enabled statistic exceeds its threshold.

mod calibrate;
mod stats;

pub use calibrate::{calibrate, calibrate_from_stats, calibrate_scores, ScoreCalibration, Thresholds};
pub use stats::{compute_stats, stat_c1, stat_c2t, stat_c2u, DetectionStats};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{AttackConfig, AttackLossKind, Optimizer};
use crate::diffnet::Model;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Criterion {
    C1,
    C2t,
    C2u,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::C1, Criterion::C2t, Criterion::C2u];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::C1 => "C1",
            Criterion::C2t => "C2t",
            Criterion::C2u => "C2u",
        }
    }
}

/// How C2t picks the class to attack towards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetChoice {
    /// Uniform over classes other than the current prediction, seeded per input.
    Uniform,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Standard deviation of the C1 noise.
    pub sigma: f64,
    pub n_noise: usize,
    pub c2t_attack: AttackConfig,
    pub c2u_attack: AttackConfig,
    pub target_choice: TargetChoice,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            sigma: 0.1,
            n_noise: 1,
            c2t_attack: AttackConfig {
                loss: AttackLossKind::CrossEntropyTargeted,
                optimizer: Optimizer::Adam,
                lr: 0.005,
                steps: 200,
                tau: 0.03,
                kappa: 0.0,
                target: None,
                seed: 0,
            },
            c2u_attack: AttackConfig {
                loss: AttackLossKind::CrossEntropyUntargeted,
                optimizer: Optimizer::Adam,
                lr: 0.2,
                steps: 1000,
                tau: 0.03,
                kappa: 0.0,
                target: None,
                seed: 0,
            },
            target_choice: TargetChoice::Uniform,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.n_noise == 0 {
            return Err(Error::InvalidConfig("n_noise must be at least 1".into()));
        }
        if !self.c2t_attack.loss.is_targeted() {
            return Err(Error::InvalidConfig("C2t needs a targeted attack loss".into()));
        }
        if self.c2u_attack.loss.is_targeted() {
            return Err(Error::InvalidConfig("C2u needs an untargeted attack loss".into()));
        }
        let mut t = self.c2t_attack.clone();
        t.target = Some(0);
        t.validate()?;
        self.c2u_attack.validate()
    }

    /// SHA-256 of the canonical JSON form; ties thresholds to a config.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub is_adversarial: bool,
    pub failed_criteria: Vec<Criterion>,
    pub stats: DetectionStats,
}

impl Verdict {
    pub fn from_stats(stats: DetectionStats, thresholds: &Thresholds) -> Self {
        let failed_criteria: Vec<Criterion> = Criterion::ALL
            .into_iter()
            .filter(|&c| match thresholds.get(c) {
                Some(t) => stats.score(c) > t,
                None => false,
            })
            .collect();
        Self {
            is_adversarial: !failed_criteria.is_empty(),
            failed_criteria,
            stats,
        }
    }
}

/// Computes `(Δ, K_t, K_u)` for `x` and compares against `thresholds`.
pub fn detect(model: &Model, x: &Tensor, thresholds: &Thresholds, config: &DetectorConfig, input_id: u64) -> Result<Verdict> {
    thresholds.check(model, config)?;
    let stats = compute_stats(model, x, config, input_id)?;
    Ok(Verdict::from_stats(stats, thresholds))
}

#[cfg(test)]
mod tests;
