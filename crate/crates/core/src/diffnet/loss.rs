use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::argmax;

/// Scalar losses that can be differentiated through the network. Each one
/// is a function of the logits; probability-space losses go through the
/// softmax Jacobian internally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarLoss {
    Constant(f64),
    /// `-log softmax(z)[label]`
    CrossEntropy { label: usize },
    /// `-sum_i target_i log softmax(z)_i`
    SoftCrossEntropy { target: Vec<f64> },
    /// `[max_{j != target} z_j - z_target + kappa]_+`
    Margin { target: usize, kappa: f64 },
    /// `[z_label - max_{j != label} z_j + kappa]_+`
    UntargetedMargin { label: usize, kappa: f64 },
    /// `|| softmax(z) - reference ||_1`
    L1Difference { reference: Vec<f64> },
    /// Weighted sum of other losses.
    Composite(Vec<(f64, ScalarLoss)>),
}

impl ScalarLoss {
    pub fn negated(self) -> Self {
        ScalarLoss::Composite(vec![(-1.0, self)])
    }

    /// Loss value and gradient with respect to the logits.
    pub fn evaluate(&self, logits: &[f64]) -> Result<(f64, Vec<f64>)> {
        let c = logits.len();
        let check = |label: usize| {
            if label >= c {
                Err(Error::InvalidLabel { label, classes: c })
            } else {
                Ok(())
            }
        };
        match self {
            ScalarLoss::Constant(v) => Ok((*v, vec![0.0; c])),
            ScalarLoss::CrossEntropy { label } => {
                check(*label)?;
                let lse = log_sum_exp(logits);
                let mut grad = softmax(logits);
                grad[*label] -= 1.0;
                Ok((lse - logits[*label], grad))
            }
            ScalarLoss::SoftCrossEntropy { target } => {
                if target.len() != c {
                    return Err(Error::shape("soft cross-entropy target", &[c], &[target.len()]));
                }
                let lse = log_sum_exp(logits);
                let mass: f64 = target.iter().sum();
                let value = target.iter().zip(logits).map(|(t, z)| t * (lse - z)).sum();
                let p = softmax(logits);
                let grad = p.iter().zip(target).map(|(pi, ti)| pi * mass - ti).collect();
                Ok((value, grad))
            }
            ScalarLoss::Margin { target, kappa } => {
                check(*target)?;
                let other = best_other(logits, *target);
                let v = logits[other] - logits[*target] + kappa;
                let mut grad = vec![0.0; c];
                if v > 0.0 {
                    grad[other] = 1.0;
                    grad[*target] = -1.0;
                    Ok((v, grad))
                } else {
                    Ok((0.0, grad))
                }
            }
            ScalarLoss::UntargetedMargin { label, kappa } => {
                check(*label)?;
                let other = best_other(logits, *label);
                let v = logits[*label] - logits[other] + kappa;
                let mut grad = vec![0.0; c];
                if v > 0.0 {
                    grad[*label] = 1.0;
                    grad[other] = -1.0;
                    Ok((v, grad))
                } else {
                    Ok((0.0, grad))
                }
            }
            ScalarLoss::L1Difference { reference } => {
                if reference.len() != c {
                    return Err(Error::shape("L1 reference", &[c], &[reference.len()]));
                }
                let p = softmax(logits);
                let value = p.iter().zip(reference).map(|(a, b)| (a - b).abs()).sum();
                let sign: Vec<f64> = p.iter().zip(reference).map(|(a, b)| sign(a - b)).collect();
                Ok((value, softmax_backward(&p, &sign)))
            }
            ScalarLoss::Composite(terms) => {
                let mut value = 0.0;
                let mut grad = vec![0.0; c];
                for (w, term) in terms {
                    let (v, g) = term.evaluate(logits)?;
                    value += w * v;
                    for (a, b) in grad.iter_mut().zip(&g) {
                        *a += w * b;
                    }
                }
                Ok((value, grad))
            }
        }
    }
}

/// Subgradient of |x| choosing 0 at the kink.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn best_other(logits: &[f64], exclude: usize) -> usize {
    let mut best = usize::MAX;
    for (j, &z) in logits.iter().enumerate() {
        if j != exclude && (best == usize::MAX || z > logits[best]) {
            best = j;
        }
    }
    best
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z[argmax(z)];
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Pulls a probability-space gradient back to logits: `p * (g - <g, p>)`.
pub fn softmax_backward(p: &[f64], g: &[f64]) -> Vec<f64> {
    let inner: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    p.iter().zip(g).map(|(pi, gi)| pi * (gi - inner)).collect()
}
