use crate::clock::Instant;

use serde::{Deserialize, Serialize};

use crate::detector::{stat_c1, stat_c2t, stat_c2u, Criterion, DetectorConfig};
use crate::diffnet::Model;
use crate::error::Result;
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub input_kind: String,
    pub criterion: Criterion,
    pub samples: usize,
    pub mean_seconds: f64,
    pub variance: f64,
}

fn time_one(model: &Model, x: &Tensor, detector: &DetectorConfig, id: u64) -> Result<[f64; 3]> {
    let mut rng = stream(detector.seed, id, Stream::Noise);
    let start = Instant::now();
    stat_c1(model, x, detector.sigma, detector.n_noise, &mut rng)?;
    let c1 = start.elapsed().as_secs_f64();
    let prediction = model.predict(x)?;
    let target = (prediction + 1) % model.num_classes();
    let start = Instant::now();
    stat_c2t(model, x, target, &detector.c2t_attack)?;
    let c2t = start.elapsed().as_secs_f64();
    let start = Instant::now();
    stat_c2u(model, x, &detector.c2u_attack)?;
    Ok([c1, c2t, start.elapsed().as_secs_f64()])
}

/// Mean and sample variance of the wall time of each criterion, per input
/// kind, over `repeats` passes. Runs sequentially on a monotonic clock
/// after one discarded warm-up evaluation.
pub fn timing_table(model: &Model, inputs_by_kind: &[(String, Vec<Tensor>)], detector: &DetectorConfig, repeats: usize) -> Result<Vec<TimingRow>> {
    if let Some(x) = inputs_by_kind.iter().find_map(|(_, v)| v.first()) {
        time_one(model, x, detector, 0)?;
    }
    let mut rows = Vec::new();
    for (kind, inputs) in inputs_by_kind {
        let mut samples: [Vec<f64>; 3] = Default::default();
        for _ in 0..repeats.max(1) {
            for (i, x) in inputs.iter().enumerate() {
                let t = time_one(model, x, detector, i as u64)?;
                for c in 0..3 {
                    samples[c].push(t[c]);
                }
            }
        }
        for (c, criterion) in Criterion::ALL.iter().enumerate() {
            let s = &samples[c];
            if s.is_empty() {
                continue;
            }
            let n = s.len() as f64;
            let mean = s.iter().sum::<f64>() / n;
            let variance = if s.len() > 1 {
                s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            rows.push(TimingRow {
                input_kind: kind.clone(),
                criterion: *criterion,
                samples: s.len(),
                mean_seconds: mean,
                variance,
            });
        }
    }
    Ok(rows)
}
