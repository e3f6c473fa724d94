use serde::{Deserialize, Serialize};

use crate::diffnet::ScalarLoss;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackLossKind {
    CrossEntropyTargeted,
    CrossEntropyUntargeted,
    MarginTargeted,
    MarginUntargeted,
}

impl AttackLossKind {
    pub fn is_targeted(self) -> bool {
        matches!(self, AttackLossKind::CrossEntropyTargeted | AttackLossKind::MarginTargeted)
    }
}

/// What the loss is measured against: a class id, or a full probability
/// vector (soft cross-entropy; margin losses use its argmax).
#[derive(Debug, Clone, PartialEq)]
pub enum AttackTarget {
    Label(usize),
    Distribution(Vec<f64>),
}

impl AttackLossKind {
    /// For targeted kinds `target` is the class to reach; for untargeted
    /// kinds it is the class to move away from.
    pub fn scalar_loss(self, target: &AttackTarget, kappa: f64) -> Result<ScalarLoss> {
        if kappa < 0.0 || !kappa.is_finite() {
            return Err(Error::InvalidConfig(format!("margin constant must be >= 0, got {kappa}")));
        }
        let label = match target {
            AttackTarget::Label(l) => *l,
            AttackTarget::Distribution(p) => {
                let s: f64 = p.iter().sum();
                if (s - 1.0).abs() > 1e-6 || p.iter().any(|v| *v < 0.0) {
                    return Err(Error::InvalidConfig("target distribution must sum to 1".into()));
                }
                crate::tensor::argmax(p)
            }
        };
        Ok(match (self, target) {
            (AttackLossKind::CrossEntropyTargeted, AttackTarget::Distribution(p)) => {
                ScalarLoss::SoftCrossEntropy { target: p.clone() }
            }
            (AttackLossKind::CrossEntropyTargeted, _) => ScalarLoss::CrossEntropy { label },
            (AttackLossKind::CrossEntropyUntargeted, AttackTarget::Distribution(p)) => {
                ScalarLoss::SoftCrossEntropy { target: p.clone() }.negated()
            }
            (AttackLossKind::CrossEntropyUntargeted, _) => ScalarLoss::CrossEntropy { label }.negated(),
            (AttackLossKind::MarginTargeted, _) => ScalarLoss::Margin { target: label, kappa },
            (AttackLossKind::MarginUntargeted, _) => ScalarLoss::UntargetedMargin { label, kappa },
        })
    }
}

/// Adversarial loss value and its gradient with respect to the logits.
pub fn adversarial_loss(kind: AttackLossKind, logits: &[f64], target: &AttackTarget, kappa: f64) -> Result<(f64, Vec<f64>)> {
    kind.scalar_loss(target, kappa)?.evaluate(logits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margin_targeted_substitution() {
        let (v, g) = adversarial_loss(AttackLossKind::MarginTargeted, &[2.0, 5.0], &AttackTarget::Label(0), 1.0).unwrap();
        assert_eq!(v, 4.0);
        assert_eq!(g, vec![-1.0, 1.0]);
    }

    #[test]
    fn margin_targeted_hinge_clamps() {
        let (v, g) = adversarial_loss(AttackLossKind::MarginTargeted, &[5.0, 2.0], &AttackTarget::Label(0), 1.0).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn targeted_ce_of_saturated_logits_is_zero() {
        let (v, _) = adversarial_loss(
            AttackLossKind::CrossEntropyTargeted,
            &[60.0, -60.0, -60.0],
            &AttackTarget::Label(0),
            0.0,
        )
        .unwrap();
        assert!(v.abs() < 1e-40);
    }

    #[test]
    fn untargeted_ce_is_negated() {
        let z = [0.3, -0.2, 1.1];
        let (a, _) = adversarial_loss(AttackLossKind::CrossEntropyTargeted, &z, &AttackTarget::Label(1), 0.0).unwrap();
        let (b, _) = adversarial_loss(AttackLossKind::CrossEntropyUntargeted, &z, &AttackTarget::Label(1), 0.0).unwrap();
        assert_eq!(a, -b);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(adversarial_loss(AttackLossKind::MarginTargeted, &[1.0, 2.0], &AttackTarget::Label(0), -1.0).is_err());
        assert!(matches!(
            adversarial_loss(AttackLossKind::CrossEntropyTargeted, &[1.0, 2.0], &AttackTarget::Label(2), 0.0),
            Err(Error::InvalidLabel { label: 2, classes: 2 })
        ));
    }
}
