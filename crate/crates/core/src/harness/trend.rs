use serde::{Deserialize, Serialize};

use super::quantiles;
use crate::adaptive::{run_whitebox_snapshots, WhiteboxConfig};
use crate::detector::{compute_stats, DetectionStats, DetectorConfig};
use crate::diffnet::Model;
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

/// 30th, 50th and 70th percentiles of Δ and K_t at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub series: String,
    pub checkpoint: usize,
    pub delta: [f64; 3],
    pub k_t: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSeries {
    pub checkpoints: Vec<usize>,
    pub lr: f64,
    pub lambda: f64,
    pub images: usize,
    pub points: Vec<TrendPoint>,
}

impl TrendSeries {
    pub fn point(&self, series: &str, checkpoint: usize) -> Option<&TrendPoint> {
        self.points.iter().find(|p| p.series == series && p.checkpoint == checkpoint)
    }
}

const LEVELS: [f64; 3] = [0.3, 0.5, 0.7];

fn summarize(series: &str, checkpoint: usize, stats: &[&DetectionStats]) -> TrendPoint {
    let d: Vec<f64> = stats.iter().map(|s| s.delta).collect();
    let k: Vec<f64> = stats.iter().map(|s| s.k_t.score).collect();
    TrendPoint {
        series: series.into(),
        checkpoint,
        delta: quantiles(&d, LEVELS).try_into().expect("three levels"),
        k_t: quantiles(&k, LEVELS).try_into().expect("three levels"),
    }
}

/// Detector statistics of white-box and gray-box iterates after each
/// checkpoint's number of attack steps, next to the clean inputs. Every
/// image contributes whether or not its attack succeeded.
#[allow(clippy::too_many_arguments)]
pub fn statistic_trend(
    model: &Model,
    images: &[Tensor],
    labels: &[usize],
    targets: &[usize],
    white_box: &WhiteboxConfig,
    gray_box: &WhiteboxConfig,
    detector: &DetectorConfig,
    checkpoints: &[usize],
    id_base: u64,
) -> Result<TrendSeries> {
    let mut checkpoints = checkpoints.to_vec();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let last = *checkpoints.last().ok_or_else(|| Error::InvalidConfig("trend needs checkpoints".into()))?;
    let run = |cfg: &WhiteboxConfig| -> Result<Vec<Vec<DetectionStats>>> {
        let mut cfg = cfg.clone();
        cfg.steps = last.max(1);
        par::try_map(images.len(), |i| {
            let id = id_base + i as u64;
            let (_, snaps) = run_whitebox_snapshots(model, &images[i], labels[i], targets[i], &cfg, i as u64, &checkpoints)?;
            snaps.iter().map(|s| compute_stats(model, s, detector, id)).collect()
        })
    };
    let white = run(white_box)?;
    let gray = run(gray_box)?;
    let clean = par::try_map(images.len(), |i| compute_stats(model, &images[i], detector, id_base + i as u64))?;
    let mut points = Vec::new();
    for (c, &checkpoint) in checkpoints.iter().enumerate() {
        points.push(summarize("clean", checkpoint, &clean.iter().collect::<Vec<_>>()));
        points.push(summarize("white_box", checkpoint, &white.iter().map(|s| &s[c]).collect::<Vec<_>>()));
        points.push(summarize("gray_box", checkpoint, &gray.iter().map(|s| &s[c]).collect::<Vec<_>>()));
    }
    Ok(TrendSeries {
        checkpoints,
        lr: white_box.lr,
        lambda: white_box.lambda,
        images: images.len(),
        points,
    })
}
