use crate::clock::Instant;

use serde::{Deserialize, Serialize};

use super::descend;
use crate::attacks::AttackResult;
use crate::baselines::{sample_masks, uncertainty_grad, KdeModel, SqueezeConfig};
use crate::diffnet::{loss_sign, softmax, softmax_backward, Model, ScalarLoss};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SqueezeAttackConfig {
    pub lr: f64,
    pub steps: usize,
    pub tau: f64,
    /// Weight of the squeezing-distance terms; 0 gives plain targeted PGD.
    pub squeeze_weight: f64,
}

impl Default for SqueezeAttackConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            steps: 50,
            tau: 0.1,
            squeeze_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArtifactsAttackConfig {
    pub lr: f64,
    pub steps: usize,
    pub tau: f64,
    pub dropout_masks: usize,
    pub dropout_rate: f64,
    pub density_weight: f64,
    pub uncertainty_weight: f64,
    pub seed: u64,
}

impl Default for ArtifactsAttackConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            steps: 50,
            tau: 0.1,
            dropout_masks: 50,
            dropout_rate: 0.5,
            density_weight: 1.0,
            uncertainty_weight: 1.0,
            seed: 0,
        }
    }
}

fn check_budget(lr: f64, steps: usize, tau: f64) -> Result<()> {
    if !(lr > 0.0) || steps == 0 || !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidConfig(format!("invalid attack budget lr={lr} steps={steps} tau={tau}")));
    }
    Ok(())
}

fn finish(model: &Model, x_adv: Tensor, first: Option<usize>, target: usize, trace: Vec<f64>, start: Instant) -> Result<AttackResult> {
    let final_prediction = model.predict(&x_adv)?;
    Ok(AttackResult {
        x_adv,
        success: final_prediction == target,
        steps_to_first_flip: first,
        final_prediction,
        loss_trace: trace,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Value and gradient of `CE(h(x), target) + w·Σᵢ ‖h(x) − h(Fᵢ(x))‖₁`.
pub(crate) fn squeeze_objective(model: &Model, x: &Tensor, target: usize, squeeze: &SqueezeConfig, weight: f64) -> Result<(f64, Vec<f64>)> {
    let trace = model.trace(x, None)?;
    let (mut value, mut dz) = ScalarLoss::CrossEntropy { label: target }.evaluate(trace.output())?;
    let mut grad = vec![0.0; x.len()];
    if weight != 0.0 {
        let p = softmax(trace.output());
        for t in squeeze.transforms() {
            let sx = t.apply(x);
            let st = model.trace(&sx, None)?;
            let q = softmax(st.output());
            let s: Vec<f64> = p.iter().zip(&q).map(|(a, b)| loss_sign(a - b)).collect();
            value += weight * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>();
            for (d, v) in dz.iter_mut().zip(softmax_backward(&p, &s)) {
                *d += weight * v;
            }
            let neg: Vec<f64> = s.iter().map(|v| -weight * v).collect();
            let gs = model.backward_span(&st, None, &softmax_backward(&q, &neg), None);
            for (g, v) in grad.iter_mut().zip(t.backward(x, &gs)) {
                *g += v;
            }
        }
    }
    for (g, v) in grad.iter_mut().zip(model.backward_span(&trace, None, &dz, None)) {
        *g += v;
    }
    Ok((value, grad))
}

/// Targeted attack that also keeps the prediction stable under the
/// squeezing transforms.
pub fn whitebox_vs_feature_squeezing(
    model: &Model,
    x: &Tensor,
    target: usize,
    squeeze: &SqueezeConfig,
    config: &SqueezeAttackConfig,
) -> Result<AttackResult> {
    check_budget(config.lr, config.steps, config.tau)?;
    if target >= model.num_classes() {
        return Err(Error::InvalidLabel {
            label: target,
            classes: model.num_classes(),
        });
    }
    let start = Instant::now();
    let mut trace = Vec::with_capacity(config.steps);
    let (x_adv, first, _) = descend(
        x,
        config.lr,
        config.steps,
        config.tau,
        &[],
        |xa| Ok(model.predict(xa)? == target),
        |xa, _| {
            let (v, g) = squeeze_objective(model, xa, target, squeeze, config.squeeze_weight)?;
            trace.push(v);
            Ok((v, g))
        },
    )?;
    finish(model, x_adv, first, target, trace, start)
}

/// Value and gradient of `CE − w_d·log φ + w_u·tr Σ` for fixed masks.
pub(crate) fn artifacts_objective(
    model: &Model,
    x: &Tensor,
    target: usize,
    kde: &KdeModel,
    masks: &[crate::diffnet::DropoutMask],
    config: &ArtifactsAttackConfig,
) -> Result<(f64, Vec<f64>)> {
    let trace = model.trace(x, None)?;
    let (ce, dz) = ScalarLoss::CrossEntropy { label: target }.evaluate(trace.output())?;
    let mut grad = model.backward_span(&trace, None, &dz, None);
    let features = trace.input_of(model.spec().final_affine_index()).expect("full trace").to_vec();
    let (log_phi, dphi) = kde.log_density_grad(target, &features)?;
    let dfeat: Vec<f64> = dphi.iter().map(|v| -config.density_weight * v).collect();
    for (g, v) in grad.iter_mut().zip(model.feature_backward(&trace, None, &dfeat)) {
        *g += v;
    }
    let (tr, gtr) = uncertainty_grad(model, x, masks)?;
    for (g, v) in grad.iter_mut().zip(gtr) {
        *g += config.uncertainty_weight * v;
    }
    Ok((ce - config.density_weight * log_phi + config.uncertainty_weight * tr, grad))
}

/// Targeted attack that raises the target-class feature density and lowers
/// dropout uncertainty. Masks are re-sampled every step.
pub fn whitebox_vs_artifacts(
    model: &Model,
    x: &Tensor,
    target: usize,
    kde: &KdeModel,
    config: &ArtifactsAttackConfig,
    input_id: u64,
) -> Result<AttackResult> {
    check_budget(config.lr, config.steps, config.tau)?;
    if model.spec().dropout_layers().is_empty() {
        return Err(Error::NoDropout);
    }
    if config.dropout_masks == 0 {
        return Err(Error::InvalidConfig("at least one dropout mask is required".into()));
    }
    let start = Instant::now();
    let mut rng = stream(config.seed, input_id, Stream::Dropout);
    let mut trace = Vec::with_capacity(config.steps);
    let (x_adv, first, _) = descend(
        x,
        config.lr,
        config.steps,
        config.tau,
        &[],
        |xa| Ok(model.predict(xa)? == target),
        |xa, _| {
            let masks = sample_masks(model, config.dropout_masks, config.dropout_rate, &mut rng)?;
            let (v, g) = artifacts_objective(model, xa, target, kde, &masks, config)?;
            trace.push(v);
            Ok((v, g))
        },
    )?;
    finish(model, x_adv, first, target, trace, start)
}
