use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{BaseLoss, LossTerm, PadvVector, WhiteboxConfig};
use crate::diffnet::{loss_sign, softmax, softmax_backward, Model, ScalarLoss, Trace};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Values of the four terms, the weighted total over the enabled terms and
/// its (BPDA) gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub values: [f64; 4],
    pub total: f64,
    pub grad: Tensor,
}

fn base_scalar(base: BaseLoss, label: usize, kappa: f64) -> ScalarLoss {
    match base {
        BaseLoss::PgdCe => ScalarLoss::CrossEntropy { label },
        BaseLoss::CwMargin => ScalarLoss::Margin { target: label, kappa },
    }
}

/// Loss and input gradient at a raw point.
fn at_point(model: &Model, point: &[f64], loss: &ScalarLoss) -> Result<(f64, Vec<f64>)> {
    let trace = model.forward_span(0, model.logits_end(), point, None);
    let (value, dz) = loss.evaluate(trace.output())?;
    Ok((value, model.backward_span(&trace, None, &dz, None)))
}

/// Gradient of the detector's cross-entropy at an already traced point.
fn detector_direction(model: &Model, trace: &Trace, label: usize) -> Result<Vec<f64>> {
    let (_, dz) = ScalarLoss::CrossEntropy { label }.evaluate(trace.output())?;
    Ok(model.backward_span(trace, None, &dz, None))
}

fn l1_scalar(p_adv: &PadvVector, base: BaseLoss, kappa: f64) -> ScalarLoss {
    match base {
        BaseLoss::PgdCe => ScalarLoss::SoftCrossEntropy {
            target: p_adv.probs.clone(),
        },
        BaseLoss::CwMargin => ScalarLoss::Margin {
            target: p_adv.target,
            kappa,
        },
    }
}

/// Cross-entropy of `h(x)` against the soft target `p_adv`.
pub fn loss_l1(model: &Model, x: &Tensor, p_adv: &PadvVector) -> Result<(f64, Tensor)> {
    let (v, g) = model.input_gradient(x, &l1_scalar(p_adv, BaseLoss::PgdCe, 0.0), None)?;
    Ok((v, g))
}

pub(crate) fn draw_noise(len: usize, sigma: f64, samples: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(format!("sigma: {e}")))?;
    Ok((0..samples).map(|_| (0..len).map(|_| normal.sample(rng)).collect()).collect())
}

/// L2 for fixed noise draws, given the clean trace at `x`.
fn l2_terms(model: &Model, x: &[f64], trace: &Trace, noise: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let p = softmax(trace.output());
    let mut value = 0.0;
    let mut dz = vec![0.0; p.len()];
    let mut grad = vec![0.0; x.len()];
    let n = noise.len() as f64;
    for eps in noise {
        let shifted: Vec<f64> = x.iter().zip(eps).map(|(a, e)| a + e).collect();
        let clamped: Vec<f64> = shifted.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let noisy = model.forward_span(0, model.logits_end(), &clamped, None);
        let q = softmax(noisy.output());
        let s: Vec<f64> = p.iter().zip(&q).map(|(a, b)| loss_sign(a - b)).collect();
        value += p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
        for (d, v) in dz.iter_mut().zip(softmax_backward(&p, &s)) {
            *d += v / n;
        }
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let dq = softmax_backward(&q, &neg);
        let gn = model.backward_span(&noisy, None, &dq, None);
        for ((g, v), sh) in grad.iter_mut().zip(gn).zip(&shifted) {
            if *sh > 0.0 && *sh < 1.0 {
                *g += v / n;
            }
        }
    }
    for (g, v) in grad.iter_mut().zip(model.backward_span(trace, None, &dz, None)) {
        *g += v;
    }
    (value, grad)
}

pub(crate) fn loss_l2_with_noise(model: &Model, x: &Tensor, noise: &[Vec<f64>]) -> Result<(f64, Tensor)> {
    let trace = model.trace(x, None)?;
    let (v, g) = l2_terms(model, x.data(), &trace, noise);
    Ok((v, x.with_data(g)))
}

/// Monte Carlo estimate of `E‖h(x) − h(clamp(x + ε))‖₁` and its gradient.
pub fn loss_l2(model: &Model, x: &Tensor, sigma: f64, samples: usize, rng: &mut Rng) -> Result<(f64, Tensor)> {
    let noise = draw_noise(x.len(), sigma, samples, rng)?;
    loss_l2_with_noise(model, x, &noise)
}

/// Loss after a frozen shift `x + scale·δ`, and the gradient with `δ` held
/// constant.
fn shifted(model: &Model, x: &[f64], delta: &[f64], scale: f64, loss: &ScalarLoss) -> Result<(f64, Vec<f64>)> {
    let point: Vec<f64> = x.iter().zip(delta).map(|(a, d)| a + scale * d).collect();
    at_point(model, &point, loss)
}

fn l3_terms(model: &Model, x: &[f64], trace: &Trace, classes: &[usize], alpha: f64, base: BaseLoss, kappa: f64) -> Result<(f64, Vec<f64>)> {
    let mut value = 0.0;
    let mut grad = vec![0.0; x.len()];
    let n = classes.len() as f64;
    for &c in classes {
        let delta = detector_direction(model, trace, c)?;
        let (v, g) = shifted(model, x, &delta, -alpha, &base_scalar(base, c, kappa))?;
        value += v / n;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b / n;
        }
    }
    Ok((value, grad))
}

pub(crate) fn sample_classes(classes: usize, exclude: usize, samples: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if classes < 2 {
        return Err(Error::InvalidConfig("at least two classes are required".into()));
    }
    Ok((0..samples)
        .map(|_| {
            let k = rng.random_range(0..classes - 1);
            if k >= exclude { k + 1 } else { k }
        })
        .collect())
}

pub(crate) fn loss_l3_with_classes(model: &Model, x: &Tensor, classes: &[usize], alpha: f64) -> Result<(f64, Tensor)> {
    let trace = model.trace(x, None)?;
    let (v, g) = l3_terms(model, x.data(), &trace, classes, alpha, BaseLoss::PgdCe, 0.0)?;
    Ok((v, x.with_data(g)))
}

/// Mean cross-entropy towards random classes `y' ≠ target` after one
/// simulated detector step `x − α·δ_{y'}`.
pub fn loss_l3(model: &Model, x: &Tensor, target: usize, alpha: f64, samples: usize, rng: &mut Rng) -> Result<(f64, Tensor)> {
    let classes = sample_classes(model.num_classes(), target, samples, rng)?;
    loss_l3_with_classes(model, x, &classes, alpha)
}

fn l4_terms(model: &Model, x: &[f64], trace: &Trace, target: usize, alpha: f64, base: BaseLoss, kappa: f64) -> Result<(f64, Vec<f64>)> {
    let delta = detector_direction(model, trace, target)?;
    let (v, g) = shifted(model, x, &delta, alpha, &base_scalar(base, target, kappa))?;
    Ok((-v, g.into_iter().map(|a| -a).collect()))
}

/// Negated cross-entropy towards `target` after one simulated step
/// `x + α·δ_{target}` away from it.
pub fn loss_l4(model: &Model, x: &Tensor, target: usize, alpha: f64) -> Result<(f64, Tensor)> {
    let trace = model.trace(x, None)?;
    let (v, g) = l4_terms(model, x.data(), &trace, target, alpha, BaseLoss::PgdCe, 0.0)?;
    Ok((v, x.with_data(g)))
}

/// Random draws consumed by one evaluation of the combined objective.
pub(crate) struct Draws {
    pub noise: Vec<Vec<f64>>,
    pub classes: Vec<usize>,
}

impl Draws {
    pub fn sample(model: &Model, x: &Tensor, target: usize, config: &WhiteboxConfig, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            noise: draw_noise(x.len(), config.sigma, config.noise_samples, rng)?,
            classes: sample_classes(model.num_classes(), target, config.class_samples, rng)?,
        })
    }
}

pub(crate) fn objective_with(model: &Model, x: &Tensor, p_adv: &PadvVector, config: &WhiteboxConfig, draws: &Draws) -> Result<Objective> {
    let trace = model.trace(x, None)?;
    let (v1, dz1) = l1_scalar(p_adv, config.base_loss, config.kappa).evaluate(trace.output())?;
    let g1 = model.backward_span(&trace, None, &dz1, None);
    let (v2, g2) = l2_terms(model, x.data(), &trace, &draws.noise);
    let (v3, g3) = l3_terms(model, x.data(), &trace, &draws.classes, config.alpha, config.base_loss, config.kappa)?;
    let (v4, g4) = l4_terms(model, x.data(), &trace, p_adv.target, config.alpha, config.base_loss, config.kappa)?;
    let weights = [
        config.lambda,
        if config.enabled(LossTerm::L2) { 1.0 } else { 0.0 },
        if config.enabled(LossTerm::L3) { 1.0 } else { 0.0 },
        if config.enabled(LossTerm::L4) { 1.0 } else { 0.0 },
    ];
    let values = [v1, v2, v3, v4];
    let total = values.iter().zip(&weights).map(|(v, w)| v * w).sum();
    let mut grad = vec![0.0; x.len()];
    for (g, w) in [g1, g2, g3, g4].iter().zip(weights) {
        if w != 0.0 {
            for (a, b) in grad.iter_mut().zip(g) {
                *a += w * b;
            }
        }
    }
    Ok(Objective {
        values,
        total,
        grad: x.with_data(grad),
    })
}

/// The combined objective at `x` with the inner gradients of L3 and L4
/// frozen on the backward pass.
pub fn bpda_gradient(model: &Model, x: &Tensor, p_adv: &PadvVector, config: &WhiteboxConfig, rng: &mut Rng) -> Result<Objective> {
    let draws = Draws::sample(model, x, p_adv.target, config, rng)?;
    objective_with(model, x, p_adv, config, &draws)
}
