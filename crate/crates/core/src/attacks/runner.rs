use crate::clock::Instant;

use serde::{Deserialize, Serialize};

use super::{project_in_place, AdamState, AttackLossKind, AttackTarget};
use crate::diffnet::{Model, ScalarLoss};
use crate::error::{Error, Result};
use crate::tensor::{argmax, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    SignGd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub loss: AttackLossKind,
    pub optimizer: Optimizer,
    pub lr: f64,
    pub steps: usize,
    pub tau: f64,
    #[serde(default)]
    pub kappa: f64,
    /// Required for targeted losses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl AttackConfig {
    /// Targeted cross-entropy with Adam.
    pub fn pgd(lr: f64, steps: usize, tau: f64) -> Self {
        Self {
            loss: AttackLossKind::CrossEntropyTargeted,
            optimizer: Optimizer::Adam,
            lr,
            steps,
            tau,
            kappa: 0.0,
            target: None,
            seed: 0,
        }
    }

    pub fn with_loss(mut self, loss: AttackLossKind) -> Self {
        self.loss = loss;
        self
    }

    pub fn with_target(mut self, target: usize) -> Self {
        self.target = Some(target);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("attack needs at least one step".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidConfig(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if self.kappa < 0.0 {
            return Err(Error::InvalidConfig(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if self.loss.is_targeted() && self.target.is_none() {
            return Err(Error::InvalidConfig("targeted loss requires a target label".into()));
        }
        Ok(())
    }
}

/// What counts as a flipped prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Goal {
    /// Argmax equals this class.
    Targeted(usize),
    /// Argmax differs from this class.
    Untargeted(usize),
}

impl Goal {
    pub fn satisfied(self, prediction: usize) -> bool {
        match self {
            Goal::Targeted(t) => prediction == t,
            Goal::Untargeted(o) => prediction != o,
        }
    }

    /// Logit gap still to close; non-positive once the goal is (nearly) met.
    pub fn margin(self, logits: &[f64]) -> f64 {
        let best_other = |k: usize| {
            logits
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != k)
                .map(|(_, &z)| z)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        match self {
            Goal::Targeted(t) => best_other(t) - logits[t],
            Goal::Untargeted(o) => logits[o] - best_other(o),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub x_adv: Tensor,
    pub success: bool,
    pub steps_to_first_flip: Option<usize>,
    pub final_prediction: usize,
    pub loss_trace: Vec<f64>,
    pub wall_time: f64,
}

/// Result of an early-stopping step count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipCount {
    /// First step at which the goal held, or the cap if it never did.
    pub steps: usize,
    pub flipped: bool,
    /// `steps` refined by linear interpolation of the goal margin between
    /// the last two iterates; `cap + 1` when the goal was never met.
    pub score: f64,
}

impl FlipCount {
    pub fn never(cap: usize) -> Self {
        Self {
            steps: cap,
            flipped: false,
            score: cap as f64 + 1.0,
        }
    }
}

struct LoopOutcome {
    x: Tensor,
    first_flip: Option<usize>,
    score: Option<f64>,
    final_logits: Vec<f64>,
    trace: Vec<f64>,
}

fn attack_loop(model: &Model, x: &Tensor, goal: Goal, loss: &ScalarLoss, config: &AttackConfig, stop_at_flip: bool) -> Result<LoopOutcome> {
    let origin = x.clone();
    let mut xa = x.clone();
    let mut adam = AdamState::new(x.len());
    let mut trace = Vec::with_capacity(config.steps);
    let mut first_flip = None;
    let mut score = None;
    let mut prev_margin = f64::NAN;
    let mut step = 0usize;
    loop {
        let t = model.trace(&xa, None)?;
        let logits = t.output().to_vec();
        let margin = goal.margin(&logits);
        if first_flip.is_none() && goal.satisfied(argmax(&logits)) {
            first_flip = Some(step);
            score = Some(if step == 0 {
                0.0
            } else {
                let drop = prev_margin - margin;
                let frac = if drop > 0.0 { (prev_margin / drop).clamp(0.0, 1.0) } else { 1.0 };
                (step - 1) as f64 + frac
            });
            if stop_at_flip {
                return Ok(LoopOutcome {
                    x: xa,
                    first_flip,
                    score,
                    final_logits: logits,
                    trace,
                });
            }
        }
        if step == config.steps {
            return Ok(LoopOutcome {
                x: xa,
                first_flip,
                score,
                final_logits: logits,
                trace,
            });
        }
        step += 1;
        prev_margin = margin;
        let (value, dlogits) = loss.evaluate(&logits)?;
        let grad = model.backward_span(&t, None, &dlogits, None);
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { step });
        }
        trace.push(value);
        match config.optimizer {
            Optimizer::Adam => adam.step(xa.data_mut(), &grad, config.lr),
            Optimizer::SignGd => {
                for (xi, g) in xa.data_mut().iter_mut().zip(&grad) {
                    *xi -= config.lr * crate::diffnet::loss_sign(*g);
                }
            }
        }
        project_in_place(xa.data_mut(), origin.data(), config.tau);
    }
}

fn goal_and_loss(model: &Model, x: &Tensor, config: &AttackConfig) -> Result<(Goal, ScalarLoss)> {
    let original = model.predict(x)?;
    let (goal, label) = if config.loss.is_targeted() {
        let t = config.target.expect("validated");
        (Goal::Targeted(t), t)
    } else {
        (Goal::Untargeted(original), original)
    };
    if label >= model.num_classes() {
        return Err(Error::InvalidLabel {
            label,
            classes: model.num_classes(),
        });
    }
    Ok((goal, config.loss.scalar_loss(&AttackTarget::Label(label), config.kappa)?))
}

/// Runs the full step budget: gradient step on the configured loss, then
/// projection onto the L-infinity ball and unit box. Untargeted losses
/// push away from the model's prediction on `x`.
pub fn run_attack(model: &Model, x: &Tensor, config: &AttackConfig) -> Result<AttackResult> {
    config.validate()?;
    let start = Instant::now();
    let (goal, loss) = goal_and_loss(model, x, config)?;
    let out = attack_loop(model, x, goal, &loss, config, false)?;
    let final_prediction = argmax(&out.final_logits);
    Ok(AttackResult {
        x_adv: out.x,
        success: goal.satisfied(final_prediction),
        steps_to_first_flip: out.first_flip,
        final_prediction,
        loss_trace: out.trace,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Number of attack steps until `goal` first holds, stopping there.
/// `config.steps` is the cap.
pub fn steps_to_flip(model: &Model, x: &Tensor, goal: Goal, config: &AttackConfig) -> Result<FlipCount> {
    let mut config = config.clone();
    let label = match goal {
        Goal::Targeted(t) => {
            config.target = Some(t);
            t
        }
        Goal::Untargeted(o) => o,
    };
    config.validate()?;
    if label >= model.num_classes() {
        return Err(Error::InvalidLabel {
            label,
            classes: model.num_classes(),
        });
    }
    let loss = config.loss.scalar_loss(&AttackTarget::Label(label), config.kappa)?;
    let out = attack_loop(model, x, goal, &loss, &config, true)?;
    Ok(match out.first_flip {
        Some(k) => FlipCount {
            steps: k,
            flipped: true,
            score: out.score.unwrap_or(k as f64),
        },
        None => FlipCount::never(config.steps),
    })
}
