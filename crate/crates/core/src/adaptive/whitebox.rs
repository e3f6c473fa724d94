use crate::clock::Instant;

use serde::{Deserialize, Serialize};

use super::losses::{objective_with, Draws};
use super::{descend, make_p_adv, WhiteboxConfig};
use crate::attacks::AttackResult;
use crate::diffnet::Model;
use crate::error::Result;
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

/// Per-step values of each term, recorded before the update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
    pub l3: Vec<f64>,
    pub l4: Vec<f64>,
    pub total: Vec<f64>,
}

impl LossTrace {
    fn push(&mut self, values: [f64; 4], total: f64) {
        self.l1.push(values[0]);
        self.l2.push(values[1]);
        self.l3.push(values[2]);
        self.l4.push(values[3]);
        self.total.push(total);
    }

    pub fn len(&self) -> usize {
        self.total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total.is_empty()
    }

    /// CSV with header `step,L1,L2,L3,L4,total`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,L1,L2,L3,L4,total\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                i + 1,
                self.l1[i],
                self.l2[i],
                self.l3[i],
                self.l4[i],
                self.total[i]
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteboxResult {
    pub attack: AttackResult,
    pub losses: LossTrace,
    pub lambda: f64,
}

/// Attacks `x` (classified as `source`) towards `target` with the combined
/// loss. Randomness comes from the `(config.seed, input_id)` attack stream.
pub fn run_whitebox(model: &Model, x: &Tensor, source: usize, target: usize, config: &WhiteboxConfig, input_id: u64) -> Result<WhiteboxResult> {
    Ok(run_whitebox_snapshots(model, x, source, target, config, input_id, &[])?.0)
}

/// As [`run_whitebox`], also returning the iterate after each step count in
/// `checkpoints` (0 is the clean input).
pub fn run_whitebox_snapshots(
    model: &Model,
    x: &Tensor,
    source: usize,
    target: usize,
    config: &WhiteboxConfig,
    input_id: u64,
    checkpoints: &[usize],
) -> Result<(WhiteboxResult, Vec<Tensor>)> {
    config.validate()?;
    let start = Instant::now();
    let p_adv = make_p_adv(&model.probs(x)?, source, target)?;
    let mut rng = stream(config.seed, input_id, Stream::Attack);
    let mut losses = LossTrace::default();
    let (x_adv, first, snaps) = descend(
        x,
        config.lr,
        config.steps,
        config.tau,
        checkpoints,
        |xa| Ok(model.predict(xa)? == target),
        |xa, _| {
            let draws = Draws::sample(model, xa, target, config, &mut rng)?;
            let obj = objective_with(model, xa, &p_adv, config, &draws)?;
            losses.push(obj.values, obj.total);
            Ok((obj.total, obj.grad.into_data()))
        },
    )?;
    let final_prediction = model.predict(&x_adv)?;
    Ok((
        WhiteboxResult {
            attack: AttackResult {
                x_adv,
                success: final_prediction == target,
                steps_to_first_flip: first,
                final_prediction,
                loss_trace: losses.total.clone(),
                wall_time: start.elapsed().as_secs_f64(),
            },
            losses,
            lambda: config.lambda,
        },
        snaps,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSearch {
    pub lambda: f64,
    pub success_rate: f64,
    /// `(lambda, success rate)` for every probe round.
    pub rounds: Vec<(f64, f64)>,
}

/// Doubles `config.lambda` until the white-box attack succeeds on at least
/// `required` of `probe` (`(id, image, source, target)` tuples), giving up
/// after `max_rounds` doublings.
pub fn escalate_lambda(
    model: &Model,
    probe: &[(u64, Tensor, usize, usize)],
    config: &WhiteboxConfig,
    required: f64,
    max_rounds: usize,
) -> Result<LambdaSearch> {
    let mut cfg = config.clone();
    let mut rounds = Vec::new();
    loop {
        let wins = crate::par::try_map(probe.len(), |i| {
            let (id, x, s, t) = &probe[i];
            Ok(run_whitebox(model, x, *s, *t, &cfg, *id)?.attack.success)
        })?;
        let rate = if probe.is_empty() {
            1.0
        } else {
            wins.iter().filter(|&&w| w).count() as f64 / probe.len() as f64
        };
        rounds.push((cfg.lambda, rate));
        if rate >= required || rounds.len() > max_rounds {
            return Ok(LambdaSearch {
                lambda: cfg.lambda,
                success_rate: rate,
                rounds,
            });
        }
        cfg.lambda *= 2.0;
    }
}
