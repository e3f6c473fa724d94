use crate::clock::Instant;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Criterion, DetectorConfig, TargetChoice};
use crate::attacks::{steps_to_flip, AttackConfig, FlipCount, Goal};
use crate::diffnet::Model;
use crate::error::{Error, Result};
use crate::rng::{stream, Rng, Stream};
use crate::tensor::{l1_distance, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionStats {
    pub delta: f64,
    pub k_t: FlipCount,
    pub k_u: FlipCount,
    /// Class used by the targeted count.
    pub target: usize,
    /// Wall time per criterion in seconds; never serialized into reports.
    #[serde(skip)]
    pub seconds: [f64; 3],
}

/// Timings are ignored.
impl PartialEq for DetectionStats {
    fn eq(&self, other: &Self) -> bool {
        self.delta == other.delta && self.k_t == other.k_t && self.k_u == other.k_u && self.target == other.target
    }
}

impl DetectionStats {
    /// Suspicion score of a criterion: larger means more likely adversarial.
    pub fn score(&self, criterion: Criterion) -> f64 {
        match criterion {
            Criterion::C1 => self.delta,
            Criterion::C2t => self.k_t.score,
            Criterion::C2u => self.k_u.score,
        }
    }
}

/// Mean L1 distance between the predicted distributions at `x` and at
/// `clamp(x + ε)` with `ε ~ N(0, σ²I)`, over `n_noise` draws.
pub fn stat_c1(model: &Model, x: &Tensor, sigma: f64, n_noise: usize, rng: &mut Rng) -> Result<f64> {
    if n_noise == 0 {
        return Err(Error::InvalidConfig("n_noise must be at least 1".into()));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(format!("sigma: {e}")))?;
    let clean = model.probs(x)?;
    let mut noisy = x.clone();
    let mut total = 0.0;
    for _ in 0..n_noise {
        for (n, &v) in noisy.data_mut().iter_mut().zip(x.data()) {
            *n = (v + normal.sample(rng)).clamp(0.0, 1.0);
        }
        total += l1_distance(&clean, &model.probs(&noisy)?);
    }
    Ok(total / n_noise as f64)
}

/// Steps of targeted attack needed to reach `target`.
pub fn stat_c2t(model: &Model, x: &Tensor, target: usize, config: &AttackConfig) -> Result<FlipCount> {
    steps_to_flip(model, x, Goal::Targeted(target), config)
}

/// Steps of untargeted attack needed to leave the current prediction.
pub fn stat_c2u(model: &Model, x: &Tensor, config: &AttackConfig) -> Result<FlipCount> {
    let original = model.predict(x)?;
    steps_to_flip(model, x, Goal::Untargeted(original), config)
}

pub(crate) fn choose_target(choice: TargetChoice, prediction: usize, classes: usize, rng: &mut Rng) -> Result<usize> {
    match choice {
        TargetChoice::Fixed(t) if t >= classes => Err(Error::InvalidLabel { label: t, classes }),
        TargetChoice::Fixed(t) => Ok(t),
        TargetChoice::Uniform => {
            let k = rng.random_range(0..classes - 1);
            Ok(if k >= prediction { k + 1 } else { k })
        }
    }
}

/// All three statistics for one input. Randomness is drawn from streams
/// keyed by `(config.seed, input_id)`, so the result does not depend on
/// evaluation order.
pub fn compute_stats(model: &Model, x: &Tensor, config: &DetectorConfig, input_id: u64) -> Result<DetectionStats> {
    let t0 = Instant::now();
    let delta = stat_c1(model, x, config.sigma, config.n_noise, &mut stream(config.seed, input_id, Stream::Noise))?;
    let t1 = Instant::now();
    let prediction = model.predict(x)?;
    let mut choice_rng = stream(config.seed, input_id, Stream::TargetChoice);
    let target = choose_target(config.target_choice, prediction, model.num_classes(), &mut choice_rng)?;
    let k_t = stat_c2t(model, x, target, &config.c2t_attack)?;
    let t2 = Instant::now();
    let k_u = steps_to_flip(model, x, Goal::Untargeted(prediction), &config.c2u_attack)?;
    let t3 = Instant::now();
    Ok(DetectionStats {
        delta,
        k_t,
        k_u,
        target,
        seconds: [(t1 - t0).as_secs_f64(), (t2 - t1).as_secs_f64(), (t3 - t2).as_secs_f64()],
    })
}
