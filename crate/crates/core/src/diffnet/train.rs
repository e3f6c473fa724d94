use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{sample_training_mask, Model, ModelParams, ModelSpec, ScalarLoss};
use crate::attacks::AdamState;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// L2 penalty coefficient on weights (not biases).
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Model,
    pub report: TrainReport,
}

/// Mini-batch Adam on mean cross-entropy, with inverted dropout at each
/// dropout layer's own rate. Deterministic given `config.seed`.
pub fn train(spec: &ModelSpec, train_set: &Dataset, test_set: Option<&Dataset>, config: &TrainingConfig) -> Result<TrainedModel> {
    spec.validate()?;
    if config.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    if train_set.image_len() != spec.input_len() {
        return Err(Error::shape("training images", &spec.input_shape, train_set.image_shape()));
    }
    if let Some(&bad) = train_set.labels.iter().find(|&&l| l >= spec.num_classes()) {
        return Err(Error::InvalidLabel {
            label: bad,
            classes: spec.num_classes(),
        });
    }
    let mut init_rng = rng::stream(config.seed, 0, Stream::Init);
    let mut model = Model::new(spec.clone(), ModelParams::init(spec, &mut init_rng))?;
    let has_dropout = !spec.dropout_layers().is_empty();
    let mut states: Vec<(AdamState, AdamState)> = model
        .params
        .affine
        .iter()
        .map(|p| (AdamState::new(p.weight.len()), AdamState::new(p.bias.len())))
        .collect();

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = rng::stream(config.seed, epoch as u64, Stream::Training);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut grads = model.params.zeros_like();
            let mut batch_loss = 0.0;
            for &i in chunk {
                let mask = if has_dropout {
                    Some(sample_training_mask(spec, &mut rng)?)
                } else {
                    None
                };
                let trace = model.forward_span(0, model.logits_end(), train_set.image_slice(i), mask.as_ref());
                let (loss, dlogits) = ScalarLoss::CrossEntropy {
                    label: train_set.labels[i],
                }
                .evaluate(trace.output())?;
                batch_loss += loss;
                model.backward_span(&trace, mask.as_ref(), &dlogits, Some(&mut grads));
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch,
                    loss: batch_loss,
                });
            }
            total += batch_loss;
            let scale = 1.0 / chunk.len() as f64;
            for ((p, g), (sw, sb)) in model.params.affine.iter_mut().zip(&grads.affine).zip(states.iter_mut()) {
                let gw: Vec<f64> = g
                    .weight
                    .data()
                    .iter()
                    .zip(p.weight.data())
                    .map(|(gi, wi)| gi * scale + config.weight_decay * wi)
                    .collect();
                let gb: Vec<f64> = g.bias.data().iter().map(|gi| gi * scale).collect();
                sw.step(p.weight.data_mut(), &gw, config.learning_rate);
                sb.step(p.bias.data_mut(), &gb, config.learning_rate);
            }
            if !model.params.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch,
                    loss: f64::NAN,
                });
            }
        }
        let mean = total / train_set.len().max(1) as f64;
        log::debug!("epoch {epoch}: mean loss {mean:.5}");
        epoch_losses.push(mean);
    }

    let train_accuracy = model.accuracy(&train_set.images_vec(), &train_set.labels)?;
    let test_accuracy = match test_set {
        Some(t) => Some(model.accuracy(&t.images_vec(), &t.labels)?),
        None => None,
    };
    Ok(TrainedModel {
        model,
        report: TrainReport {
            epochs: config.epochs,
            epoch_losses,
            train_accuracy,
            test_accuracy,
            seed: config.seed,
        },
    })
}
