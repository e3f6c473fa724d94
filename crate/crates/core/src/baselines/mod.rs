//! Baseline detectors: Feature Squeezing and Artifacts (kernel density in
//! feature space plus dropout uncertainty).

mod kde;
mod squeeze;
mod uncertainty;

pub use kde::{kde_density, kde_fit, median_bandwidth, KdeModel};
pub use squeeze::{fs_statistic, squeeze_transforms, NlmParams, Squeeze, SqueezeConfig};
pub use uncertainty::dropout_uncertainty;
pub(crate) use uncertainty::{sample_masks, uncertainty_grad};

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::calibrate_scores;
use crate::diffnet::Model;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArtifactsConfig {
    /// Kernel bandwidth; the median heuristic when absent.
    pub bandwidth: Option<f64>,
    pub dropout_masks: usize,
    pub dropout_rate: f64,
}

impl Default for ArtifactsConfig {
    fn default() -> Self {
        Self {
            bandwidth: None,
            dropout_masks: 50,
            dropout_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub squeeze: SqueezeConfig,
    pub artifacts: ArtifactsConfig,
    pub seed: u64,
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        self.squeeze.validate()?;
        if let Some(b) = self.artifacts.bandwidth {
            if !(b > 0.0) {
                return Err(Error::InvalidConfig(format!("bandwidth must be positive, got {b}")));
            }
        }
        if self.artifacts.dropout_masks < 2 {
            return Err(Error::InvalidConfig("Artifacts needs at least two dropout masks".into()));
        }
        if !(0.0..1.0).contains(&self.artifacts.dropout_rate) {
            return Err(Error::InvalidConfig(format!("dropout rate {} outside [0, 1)", self.artifacts.dropout_rate)));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

/// Baseline statistics of one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    pub fs: f64,
    /// Log kernel density of the predicted class at the input's features.
    pub log_density: f64,
    pub uncertainty: f64,
}

/// Penultimate features of `x` under the deterministic forward pass.
pub fn features(model: &Model, x: &Tensor) -> Result<Vec<f64>> {
    Ok(model.forward(x, None)?.features.into_data())
}

/// Fits the Artifacts density on `images` with their true labels.
pub fn fit_artifacts(model: &Model, images: &[Tensor], labels: &[usize], config: &ArtifactsConfig) -> Result<KdeModel> {
    let feats = crate::par::try_map(images.len(), |i| features(model, &images[i]))?;
    kde_fit(&feats, labels, model.num_classes(), config.bandwidth)
}

pub fn baseline_stats(model: &Model, kde: &KdeModel, x: &Tensor, config: &BaselineConfig, input_id: u64) -> Result<BaselineStats> {
    let fwd = model.forward(x, None)?;
    let class = fwd.logits.argmax();
    let log_density = kde.log_density(class, fwd.features.data())?;
    let mut rng = stream(config.seed, input_id, Stream::Dropout);
    let (_, uncertainty) = dropout_uncertainty(model, x, config.artifacts.dropout_masks, config.artifacts.dropout_rate, &mut rng)?;
    Ok(BaselineStats {
        fs: fs_statistic(model, x, &config.squeeze)?,
        log_density,
        uncertainty,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineThresholds {
    pub t_fs: f64,
    pub t_log_density: f64,
    pub t_uncertainty: f64,
    pub target_fpr: f64,
    pub fs_achieved_fpr: f64,
    pub artifacts_achieved_fpr: f64,
    pub calibration_set_id: String,
    pub model_checksum: String,
    pub config_hash: String,
}

impl BaselineThresholds {
    pub fn check(&self, model: &Model, config: &BaselineConfig) -> Result<()> {
        if model.checksum() != self.model_checksum {
            return Err(Error::StaleCalibration("baseline thresholds belong to another model".into()));
        }
        if config.fingerprint() != self.config_hash {
            return Err(Error::StaleCalibration("baseline thresholds belong to another configuration".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Calibrates Feature Squeezing on its statistic and Artifacts jointly on
/// low density and high uncertainty.
pub fn calibrate_baselines(
    stats: &[BaselineStats],
    target_fpr: f64,
    model: &Model,
    config: &BaselineConfig,
    set_id: &str,
) -> Result<BaselineThresholds> {
    let fs = calibrate_scores(&[stats.iter().map(|s| s.fs).collect()], target_fpr)?;
    let art = calibrate_scores(
        &[
            stats.iter().map(|s| -s.log_density).collect(),
            stats.iter().map(|s| s.uncertainty).collect(),
        ],
        target_fpr,
    )?;
    Ok(BaselineThresholds {
        t_fs: fs.thresholds[0],
        t_log_density: -art.thresholds[0],
        t_uncertainty: art.thresholds[1],
        target_fpr,
        fs_achieved_fpr: fs.achieved_fpr,
        artifacts_achieved_fpr: art.achieved_fpr,
        calibration_set_id: set_id.to_string(),
        model_checksum: model.checksum(),
        config_hash: config.fingerprint(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineVerdict {
    pub feature_squeezing: bool,
    pub artifacts: bool,
}

/// Strict comparisons: a statistic equal to its threshold is benign.
pub fn baseline_detect(stats: &BaselineStats, thresholds: &BaselineThresholds) -> BaselineVerdict {
    BaselineVerdict {
        feature_squeezing: stats.fs > thresholds.t_fs,
        artifacts: stats.log_density < thresholds.t_log_density || stats.uncertainty > thresholds.t_uncertainty,
    }
}

#[cfg(test)]
mod tests;
