//! Finite-difference audit of every differentiable objective in the crate.

use rand::Rng as _;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::adaptive::{
    artifacts_objective, loss_l1, loss_l2_with_noise, loss_l3_with_classes, loss_l4, make_p_adv, objective_with, squeeze_objective,
    ArtifactsAttackConfig, Draws, WhiteboxConfig,
};
use crate::baselines::{features, kde_fit, sample_masks, SqueezeConfig};
use crate::diffnet::{sample_dropout_mask, Model, ModelParams, ModelSpec, ScalarLoss};
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Central finite differences of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-6)
}

/// Small MLP with random weights and biases: `dims[0] -> ... -> dims[last]`.
pub fn random_mlp(dims: &[usize], dropout: Option<f64>, seed: u64) -> Model {
    let spec = ModelSpec::mlp(&[dims[0]], &dims[1..dims.len() - 1], dims[dims.len() - 1], dropout);
    let mut rng = Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(&spec, &mut rng);
    for p in &mut params.affine {
        for b in p.bias.data_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    Model::new(spec, params).expect("consistent parameters")
}

pub fn random_input(len: usize, rng: &mut Rng) -> Tensor {
    Tensor::vector((0..len).map(|_| rng.random_range(0.05..0.95)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub name: String,
    pub trials: usize,
    pub max_rel_error: f64,
}

struct Audit {
    checks: Vec<GradientCheck>,
}

impl Audit {
    fn record(&mut self, name: &str, err: f64) {
        match self.checks.iter_mut().find(|c| c.name == name) {
            Some(c) => {
                c.trials += 1;
                c.max_rel_error = c.max_rel_error.max(err);
            }
            None => self.checks.push(GradientCheck {
                name: name.into(),
                trials: 1,
                max_rel_error: err,
            }),
        }
    }
}

fn ce_at(model: &Model, point: &[f64], label: usize) -> f64 {
    model
        .input_gradient(&Tensor::vector(point.to_vec()), &ScalarLoss::CrossEntropy { label }, None)
        .expect("valid input")
        .0
}

fn frozen_direction(model: &Model, x: &Tensor, label: usize) -> Result<Vec<f64>> {
    Ok(model.input_gradient(x, &ScalarLoss::CrossEntropy { label }, None)?.1.into_data())
}

fn shift(x: &[f64], delta: &[f64], scale: f64) -> Vec<f64> {
    x.iter().zip(delta).map(|(a, d)| a + scale * d).collect()
}

fn random_distribution(classes: usize, rng: &mut Rng) -> Vec<f64> {
    let d: Vec<f64> = (0..classes).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = d.iter().sum();
    d.into_iter().map(|v| v / s).collect()
}

/// Compares analytic input gradients against central differences on
/// `trials` random networks and inputs per objective. The detector-aware
/// terms that use frozen inner gradients are compared against the explicit
/// frozen-direction surrogate they are defined to differentiate.
pub fn gradient_audit(trials: usize, seed: u64) -> Result<Vec<GradientCheck>> {
    let mut audit = Audit { checks: Vec::new() };
    let mut rng = Rng::seed_from_u64(seed);
    for trial in 0..trials as u64 {
        let classes = 4;
        let model = random_mlp(&[7, 9, 6, classes], Some(0.3), seed.wrapping_mul(1000).wrapping_add(trial));
        let x = random_input(7, &mut rng);
        let mask = if trial % 2 == 0 {
            Some(sample_dropout_mask(model.spec(), 0.3, &mut rng)?)
        } else {
            None
        };
        let y = rng.random_range(0..classes);
        let t = (y + 1 + rng.random_range(0..classes - 1)) % classes;
        let dist = random_distribution(classes, &mut rng);
        let losses = [
            ("cross_entropy", ScalarLoss::CrossEntropy { label: y }),
            ("soft_cross_entropy", ScalarLoss::SoftCrossEntropy { target: dist.clone() }),
            ("margin", ScalarLoss::Margin { target: t, kappa: 5.0 }),
            ("untargeted_margin", ScalarLoss::UntargetedMargin { label: y, kappa: 5.0 }),
            ("l1_difference", ScalarLoss::L1Difference { reference: dist.clone() }),
        ];
        for (name, loss) in &losses {
            let (_, g) = model.input_gradient(&x, loss, mask.as_ref())?;
            let f = |v: &[f64]| model.input_gradient(&Tensor::vector(v.to_vec()), loss, mask.as_ref()).expect("valid input").0;
            audit.record(name, rel_error(g.data(), &fd_gradient(f, x.data(), 1e-5)));
        }

        let p = make_p_adv(&model.probs(&x)?, y, t)?;
        let (_, g) = loss_l1(&model, &x, &p)?;
        let f = |v: &[f64]| loss_l1(&model, &Tensor::vector(v.to_vec()), &p).expect("valid input").0;
        audit.record("L1 swapped target", rel_error(g.data(), &fd_gradient(f, x.data(), 1e-5)));

        let config = WhiteboxConfig {
            lambda: rng.random_range(0.5..4.0),
            alpha: rng.random_range(0.05..0.4),
            sigma: if trial % 2 == 0 { 0.05 } else { 0.3 },
            noise_samples: 2,
            class_samples: 2,
            ..WhiteboxConfig::default()
        };
        let draws = Draws::sample(&model, &x, t, &config, &mut rng)?;
        let (_, g) = loss_l2_with_noise(&model, &x, &draws.noise)?;
        let f = |v: &[f64]| loss_l2_with_noise(&model, &Tensor::vector(v.to_vec()), &draws.noise).expect("valid input").0;
        audit.record("L2 noise difference", rel_error(g.data(), &fd_gradient(f, x.data(), 1e-6)));

        let d3 = draws
            .classes
            .iter()
            .map(|&c| frozen_direction(&model, &x, c))
            .collect::<Result<Vec<_>>>()?;
        let d4 = frozen_direction(&model, &x, t)?;
        let l3 = |v: &[f64]| {
            draws
                .classes
                .iter()
                .zip(&d3)
                .map(|(&c, d)| ce_at(&model, &shift(v, d, -config.alpha), c))
                .sum::<f64>()
                / draws.classes.len() as f64
        };
        let l4 = |v: &[f64]| -ce_at(&model, &shift(v, &d4, config.alpha), t);
        let (_, g) = loss_l3_with_classes(&model, &x, &draws.classes, config.alpha)?;
        audit.record("L3 frozen direction", rel_error(g.data(), &fd_gradient(l3, x.data(), 1e-5)));
        let (_, g) = loss_l4(&model, &x, t, config.alpha)?;
        audit.record("L4 frozen direction", rel_error(g.data(), &fd_gradient(l4, x.data(), 1e-5)));

        let obj = objective_with(&model, &x, &p, &config, &draws)?;
        let composite = |v: &[f64]| {
            let point = Tensor::vector(v.to_vec());
            config.lambda * loss_l1(&model, &point, &p).expect("valid input").0
                + loss_l2_with_noise(&model, &point, &draws.noise).expect("valid input").0
                + l3(v)
                + l4(v)
        };
        audit.record("composite", rel_error(obj.grad.data(), &fd_gradient(composite, x.data(), 1e-6)));

        let image = random_input(16, &mut rng).reshape(vec![1, 4, 4])?;
        let small = random_mlp(&[16, 8, 3], None, seed ^ (trial + 7));
        let squeeze = SqueezeConfig {
            median_window: Some(3),
            bit_depth: None,
            nlm: None,
        };
        let target = trial as usize % 3;
        let (_, g) = squeeze_objective(&small, &image, target, &squeeze, 0.7)?;
        let f = |v: &[f64]| squeeze_objective(&small, &image.with_data(v.to_vec()), target, &squeeze, 0.7).expect("valid input").0;
        audit.record("feature squeezing objective", rel_error(&g, &fd_gradient(f, image.data(), 1e-7)));

        let dropout = random_mlp(&[6, 8, 3], Some(0.5), seed ^ (trial + 11));
        let fit: Vec<Tensor> = (0..30).map(|_| random_input(6, &mut rng)).collect();
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let feats = fit.iter().map(|x| features(&dropout, x)).collect::<Result<Vec<_>>>()?;
        let kde = kde_fit(&feats, &labels, 3, None)?;
        let masks = sample_masks(&dropout, 5, 0.5, &mut rng)?;
        let point = random_input(6, &mut rng);
        let attack = ArtifactsAttackConfig::default();
        let (_, g) = artifacts_objective(&dropout, &point, target, &kde, &masks, &attack)?;
        let f = |v: &[f64]| {
            artifacts_objective(&dropout, &Tensor::vector(v.to_vec()), target, &kde, &masks, &attack)
                .expect("valid input")
                .0
        };
        audit.record("density and uncertainty objective", rel_error(&g, &fd_gradient(f, point.data(), 1e-6)));
    }
    Ok(audit.checks)
}
