use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{compute_stats, Criterion, DetectionStats, DetectorConfig};
use crate::diffnet::Model;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Thresholds chosen on one calibration set for one model and config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// `None` disables the criterion.
    pub t_c1: Option<f64>,
    pub t_c2t: Option<f64>,
    pub t_c2u: Option<f64>,
    pub target_fpr: f64,
    pub achieved_fpr: f64,
    pub calibration_set_id: String,
    pub calibration_size: usize,
    pub model_checksum: String,
    pub config_hash: String,
}

impl Thresholds {
    pub fn get(&self, criterion: Criterion) -> Option<f64> {
        match criterion {
            Criterion::C1 => self.t_c1,
            Criterion::C2t => self.t_c2t,
            Criterion::C2u => self.t_c2u,
        }
    }

    pub fn enabled(&self) -> Vec<Criterion> {
        Criterion::ALL.into_iter().filter(|&c| self.get(c).is_some()).collect()
    }

    /// Fails with [`Error::StaleCalibration`] when the thresholds were
    /// computed for another model or detector configuration.
    pub fn check(&self, model: &Model, config: &DetectorConfig) -> Result<()> {
        let checksum = model.checksum();
        if checksum != self.model_checksum {
            return Err(Error::StaleCalibration(format!(
                "thresholds belong to model {}, got {}",
                short(&self.model_checksum),
                short(&checksum)
            )));
        }
        let hash = config.fingerprint();
        if hash != self.config_hash {
            return Err(Error::StaleCalibration(format!(
                "thresholds belong to detector config {}, got {}",
                short(&self.config_hash),
                short(&hash)
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

/// Result of [`calibrate_scores`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCalibration {
    pub thresholds: Vec<f64>,
    pub flagged: usize,
    pub achieved_fpr: f64,
}

/// Threshold flagging the `m` largest of `sorted` (ascending) under a strict
/// `>` comparison, or fewer when ties straddle the cut.
fn threshold_for(sorted: &[f64], m: usize) -> f64 {
    let n = sorted.len();
    if m == 0 {
        sorted[n - 1]
    } else if m >= n {
        sorted[0].next_down()
    } else {
        sorted[n - m - 1]
    }
}

/// Joint thresholds for several suspicion scores (larger = more suspicious).
///
/// All columns share one quantile level. The level advances one column at
/// a time in round-robin order, so each increment flags at most one more
/// input; the largest level whose union stays within `target_fpr` wins.
/// With one column this is the plain empirical quantile.
pub fn calibrate_scores(columns: &[Vec<f64>], target_fpr: f64) -> Result<ScoreCalibration> {
    if columns.is_empty() {
        return Err(Error::InvalidConfig("no criteria to calibrate".into()));
    }
    if !(target_fpr > 0.0 && target_fpr <= 1.0) {
        return Err(Error::InvalidConfig(format!("target FPR must lie in (0, 1], got {target_fpr}")));
    }
    let n = columns[0].len();
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidConfig("score columns differ in length".into()));
    }
    let required = (1.0 / target_fpr - 1e-9).ceil() as usize;
    if n < required.max(1) {
        return Err(Error::Unidentifiable {
            size: n,
            target_fpr,
            required,
        });
    }
    if columns.iter().flatten().any(|v| v.is_nan()) {
        return Err(Error::InvalidConfig("NaN suspicion score".into()));
    }
    let sorted: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| {
            let mut s = c.clone();
            s.sort_by(f64::total_cmp);
            s
        })
        .collect();
    let k = columns.len();
    let at_level = |level: usize| -> Vec<f64> {
        (0..k)
            .map(|c| threshold_for(&sorted[c], (level + k - 1 - c) / k))
            .collect()
    };
    let union = |thresholds: &[f64]| -> usize {
        (0..n)
            .filter(|&i| columns.iter().zip(thresholds).any(|(col, &t)| col[i] > t))
            .count()
    };
    let allowed = ((target_fpr * n as f64) + 1e-9).floor() as usize;
    let (mut lo, mut hi) = (0usize, k * n);
    while lo < hi {
        let mid = lo + (hi - lo + 1) / 2;
        if union(&at_level(mid)) <= allowed {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let thresholds = at_level(lo);
    let flagged = union(&thresholds);
    Ok(ScoreCalibration {
        thresholds,
        flagged,
        achieved_fpr: flagged as f64 / n as f64,
    })
}

/// Thresholds for the `criteria` subset from precomputed clean statistics.
pub fn calibrate_from_stats(
    stats: &[DetectionStats],
    criteria: &[Criterion],
    target_fpr: f64,
    model: &Model,
    config: &DetectorConfig,
    set_id: &str,
) -> Result<Thresholds> {
    let columns: Vec<Vec<f64>> = criteria
        .iter()
        .map(|&c| stats.iter().map(|s| s.score(c)).collect())
        .collect();
    let cal = calibrate_scores(&columns, target_fpr)?;
    let pick = |c: Criterion| criteria.iter().position(|&x| x == c).map(|i| cal.thresholds[i]);
    Ok(Thresholds {
        t_c1: pick(Criterion::C1),
        t_c2t: pick(Criterion::C2t),
        t_c2u: pick(Criterion::C2u),
        target_fpr,
        achieved_fpr: cal.achieved_fpr,
        calibration_set_id: set_id.to_string(),
        calibration_size: stats.len(),
        model_checksum: model.checksum(),
        config_hash: config.fingerprint(),
    })
}

/// Computes statistics on clean inputs and calibrates all three criteria
/// jointly. `ids[i]` seeds the random streams of `clean[i]`.
pub fn calibrate(model: &Model, clean: &[Tensor], ids: &[u64], config: &DetectorConfig, target_fpr: f64, set_id: &str) -> Result<(Thresholds, Vec<DetectionStats>)> {
    config.validate()?;
    if clean.len() != ids.len() {
        return Err(Error::InvalidConfig("one id per calibration input".into()));
    }
    let required = (1.0 / target_fpr - 1e-9).ceil().max(1.0) as usize;
    if clean.len() < required {
        return Err(Error::Unidentifiable {
            size: clean.len(),
            target_fpr,
            required,
        });
    }
    let stats = crate::par::try_map(clean.len(), |i| compute_stats(model, &clean[i], config, ids[i]))?;
    let thresholds = calibrate_from_stats(&stats, &Criterion::ALL, target_fpr, model, config, set_id)?;
    Ok((thresholds, stats))
}
