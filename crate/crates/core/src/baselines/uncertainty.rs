use crate::diffnet::{sample_dropout_mask, softmax, softmax_backward, DropoutMask, Model, Trace};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub(crate) fn sample_masks(model: &Model, n: usize, rate: f64, rng: &mut Rng) -> Result<Vec<DropoutMask>> {
    (0..n).map(|_| sample_dropout_mask(model.spec(), rate, rng)).collect()
}

fn first_dropout(model: &Model, x: &Tensor) -> Result<usize> {
    let split = model.spec().dropout_layers().first().map(|&(i, _)| i).ok_or(Error::NoDropout)?;
    if x.len() != model.spec().input_len() {
        return Err(Error::shape("model input", &model.spec().input_shape, x.shape()));
    }
    Ok(split)
}

/// Probability vectors under each mask, sharing the mask-free prefix.
fn masked_probs(model: &Model, prefix: &Trace, split: usize, masks: &[DropoutMask]) -> Vec<(Trace, Vec<f64>)> {
    masks
        .iter()
        .map(|m| {
            let t = model.forward_span(split, model.logits_end(), prefix.output(), Some(m));
            let p = softmax(t.output());
            (t, p)
        })
        .collect()
}

fn mean_and_trace(probs: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let n = probs.len();
    let c = probs[0].len();
    let mut mu = vec![0.0; c];
    for p in probs {
        for (m, v) in mu.iter_mut().zip(p) {
            *m += v / n as f64;
        }
    }
    if n < 2 {
        return (mu, 0.0);
    }
    let ss: f64 = probs.iter().flat_map(|p| p.iter().zip(&mu).map(|(v, m)| (v - m) * (v - m))).sum();
    (mu, ss / (n - 1) as f64)
}

/// Mean prediction and trace of the sample covariance over dropout masks.
pub(crate) fn uncertainty_with_masks(model: &Model, x: &Tensor, masks: &[DropoutMask]) -> Result<(Vec<f64>, f64)> {
    if masks.is_empty() {
        return Err(Error::InvalidConfig("at least one dropout mask is required".into()));
    }
    let split = first_dropout(model, x)?;
    let prefix = model.forward_span(0, split, x.data(), None);
    let probs: Vec<Vec<f64>> = masked_probs(model, &prefix, split, masks).into_iter().map(|(_, p)| p).collect();
    Ok(mean_and_trace(&probs))
}

/// `n` masked forward passes at dropout `rate`: returns the mean
/// probability vector and the trace of their sample covariance.
pub fn dropout_uncertainty(model: &Model, x: &Tensor, n: usize, rate: f64, rng: &mut Rng) -> Result<(Vec<f64>, f64)> {
    first_dropout(model, x)?;
    let masks = sample_masks(model, n, rate, rng)?;
    uncertainty_with_masks(model, x, &masks)
}

/// Covariance trace and its gradient with respect to `x`.
pub(crate) fn uncertainty_grad(model: &Model, x: &Tensor, masks: &[DropoutMask]) -> Result<(f64, Vec<f64>)> {
    let split = first_dropout(model, x)?;
    let prefix = model.forward_span(0, split, x.data(), None);
    let runs = masked_probs(model, &prefix, split, masks);
    let n = runs.len();
    if n < 2 {
        return Ok((0.0, vec![0.0; x.len()]));
    }
    let probs: Vec<Vec<f64>> = runs.iter().map(|(_, p)| p.clone()).collect();
    let (mu, tr) = mean_and_trace(&probs);
    let mut g_split = vec![0.0; prefix.output().len()];
    for ((t, p), m) in runs.iter().zip(masks) {
        let dp: Vec<f64> = p.iter().zip(&mu).map(|(v, u)| 2.0 * (v - u) / (n - 1) as f64).collect();
        let dz = softmax_backward(p, &dp);
        for (a, b) in g_split.iter_mut().zip(model.backward_span(t, Some(m), &dz, None)) {
            *a += b;
        }
    }
    Ok((tr, model.backward_span(&prefix, None, &g_split, None)))
}
