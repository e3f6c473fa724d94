//! A small differentiable classifier over a fixed layer vocabulary
//! (affine, ReLU, dropout, softmax) with hand-written backpropagation.
//!
//! Gradients are exact with respect to both the input and the parameters.
//! Dropout at inference happens only through an explicit [`DropoutMask`].

mod checkpoint;
mod loss;
mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_FORMAT};
pub use loss::{log_sum_exp, sign as loss_sign, softmax, softmax_backward, ScalarLoss};
pub use train::{train, TrainReport, TrainedModel, TrainingConfig};

use rand::Rng as _;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{axpy, dot, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Affine { inputs: usize, outputs: usize },
    Relu,
    Dropout { rate: f64 },
    /// Marks the logits/probabilities boundary. Must be the last layer.
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
}

impl ModelSpec {
    /// Multi-layer perceptron: `[affine, relu]*` for each hidden width, an
    /// optional dropout before the output layer, then affine + softmax.
    pub fn mlp(input_shape: &[usize], hidden: &[usize], classes: usize, dropout: Option<f64>) -> Self {
        let mut layers = Vec::new();
        let mut width: usize = input_shape.iter().product();
        for &h in hidden {
            layers.push(Layer::Affine {
                inputs: width,
                outputs: h,
            });
            layers.push(Layer::Relu);
            width = h;
        }
        if let Some(rate) = dropout {
            layers.push(Layer::Dropout { rate });
        }
        layers.push(Layer::Affine {
            inputs: width,
            outputs: classes,
        });
        layers.push(Layer::Softmax);
        Self {
            input_shape: input_shape.to_vec(),
            layers,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_shape.is_empty() || self.input_len() == 0 {
            return Err(Error::InvalidSpec("empty input shape".into()));
        }
        let mut width = self.input_len();
        let softmax_count = self.layers.iter().filter(|l| matches!(l, Layer::Softmax)).count();
        if softmax_count != 1 || !matches!(self.layers.last(), Some(Layer::Softmax)) {
            return Err(Error::InvalidSpec(
                "exactly one softmax layer is required, in last position".into(),
            ));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                Layer::Affine { inputs, outputs } => {
                    if inputs != width {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: affine expects {inputs} inputs but receives {width}"
                        )));
                    }
                    if outputs == 0 {
                        return Err(Error::InvalidSpec(format!("layer {i}: affine with zero outputs")));
                    }
                    width = outputs;
                }
                Layer::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: dropout rate {rate} outside [0, 1)"
                        )));
                    }
                }
                Layer::Relu | Layer::Softmax => {}
            }
        }
        if !matches!(self.layers.get(self.layers.len().wrapping_sub(2)), Some(Layer::Affine { .. })) {
            return Err(Error::InvalidSpec("softmax must directly follow an affine layer".into()));
        }
        if width < 2 {
            return Err(Error::InvalidSpec("at least two classes are required".into()));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Affine { outputs, .. } => Some(*outputs),
                _ => None,
            })
            .unwrap_or(0)
    }

    fn softmax_index(&self) -> usize {
        self.layers.len() - 1
    }

    /// Index of the affine layer producing the logits.
    pub fn final_affine_index(&self) -> usize {
        self.layers.len() - 2
    }

    /// Width of the activation entering each layer.
    fn widths(&self) -> Vec<usize> {
        let mut width = self.input_len();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            out.push(width);
            if let Layer::Affine { outputs, .. } = layer {
                width = *outputs;
            }
        }
        out
    }

    /// `(layer index, activation width)` for each dropout layer, in order.
    pub fn dropout_layers(&self) -> Vec<(usize, usize)> {
        let widths = self.widths();
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Dropout { .. }))
            .map(|(i, _)| (i, widths[i]))
            .collect()
    }

    pub fn feature_len(&self) -> usize {
        self.widths()[self.final_affine_index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    /// `[inputs, outputs]`, row-major.
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Weights and biases, one entry per affine layer in network order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub affine: Vec<AffineParams>,
}

impl ModelParams {
    /// He-uniform weights, zero biases.
    pub fn init(spec: &ModelSpec, rng: &mut Rng) -> Self {
        let affine = spec
            .layers
            .iter()
            .filter_map(|l| match *l {
                Layer::Affine { inputs, outputs } => {
                    let bound = (6.0 / inputs as f64).sqrt();
                    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                    let w: Vec<f64> = (0..inputs * outputs).map(|_| dist.sample(rng)).collect();
                    Some(AffineParams {
                        weight: Tensor::new(vec![inputs, outputs], w).expect("shape"),
                        bias: Tensor::zeros(&[outputs]),
                    })
                }
                _ => None,
            })
            .collect();
        Self { affine }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            affine: self
                .affine
                .iter()
                .map(|p| AffineParams {
                    weight: Tensor::zeros(p.weight.shape()),
                    bias: Tensor::zeros(p.bias.shape()),
                })
                .collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.affine.iter().map(|p| p.weight.len() + p.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.affine.iter().all(|p| p.weight.is_finite() && p.bias.is_finite())
    }

    /// SHA-256 over the little-endian parameter bytes.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.affine {
            for v in p.weight.data().iter().chain(p.bias.data()) {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

/// Per-dropout-layer binary masks. Kept units of layer `k` are rescaled
/// by `scales[k]` (`1 / (1 - rate)` at sampling time), so an all-ones mask
/// sampled at rate 0 is the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutMask {
    pub masks: Vec<Tensor>,
    pub scales: Vec<f64>,
    pub seed: Option<u64>,
}

impl DropoutMask {
    pub fn ones(spec: &ModelSpec) -> Self {
        let layers = spec.dropout_layers();
        Self {
            masks: layers.iter().map(|&(_, w)| Tensor::filled(&[w], 1.0)).collect(),
            scales: vec![1.0; layers.len()],
            seed: None,
        }
    }
}

/// I.i.d. Bernoulli(1 - rate) mask for every dropout layer in `spec`.
pub fn sample_dropout_mask(spec: &ModelSpec, rate: f64, rng: &mut Rng) -> Result<DropoutMask> {
    let n = spec.dropout_layers().len();
    sample_mask_with_rates(spec, &vec![rate; n], rng)
}

/// Mask using each dropout layer's own rate from the spec.
pub(crate) fn sample_training_mask(spec: &ModelSpec, rng: &mut Rng) -> Result<DropoutMask> {
    let rates: Vec<f64> = spec
        .layers
        .iter()
        .filter_map(|l| match l {
            Layer::Dropout { rate } => Some(*rate),
            _ => None,
        })
        .collect();
    sample_mask_with_rates(spec, &rates, rng)
}

fn sample_mask_with_rates(spec: &ModelSpec, rates: &[f64], rng: &mut Rng) -> Result<DropoutMask> {
    let layers = spec.dropout_layers();
    if layers.is_empty() {
        return Err(Error::NoDropout);
    }
    if let Some(r) = rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(Error::InvalidConfig(format!("dropout rate {r} outside [0, 1)")));
    }
    let masks = layers
        .iter()
        .zip(rates)
        .map(|(&(_, w), &rate)| {
            let keep = 1.0 - rate;
            let bits = (0..w).map(|_| if rng.random::<f64>() < keep { 1.0 } else { 0.0 }).collect();
            Tensor::vector(bits)
        })
        .collect();
    Ok(DropoutMask {
        masks,
        scales: rates.iter().map(|r| 1.0 / (1.0 - r)).collect(),
        seed: None,
    })
}

/// Outputs of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub logits: Tensor,
    pub probs: Tensor,
    /// Activation feeding the final affine layer.
    pub features: Tensor,
}

/// Cached activations for layers `start..end`. `acts[k]` is the input of
/// layer `start + k`; the last entry is the output of layer `end - 1`.
#[derive(Debug, Clone)]
pub struct Trace {
    start: usize,
    end: usize,
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has at least one activation")
    }

    /// Input of layer `layer`, if it lies inside the traced span.
    pub fn input_of(&self, layer: usize) -> Option<&[f64]> {
        (layer >= self.start && layer <= self.end).then(|| self.acts[layer - self.start].as_slice())
    }
}

/// A classifier: validated spec plus parameters. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    spec: ModelSpec,
    params: ModelParams,
}

impl Model {
    pub fn new(spec: ModelSpec, params: ModelParams) -> Result<Self> {
        spec.validate()?;
        let expected: Vec<(usize, usize)> = spec
            .layers
            .iter()
            .filter_map(|l| match *l {
                Layer::Affine { inputs, outputs } => Some((inputs, outputs)),
                _ => None,
            })
            .collect();
        if expected.len() != params.affine.len() {
            return Err(Error::InvalidSpec(format!(
                "spec has {} affine layers, params have {}",
                expected.len(),
                params.affine.len()
            )));
        }
        for (k, ((i, o), p)) in expected.iter().zip(&params.affine).enumerate() {
            if p.weight.shape() != [*i, *o] {
                return Err(Error::shape(format!("affine layer {k} weight"), &[*i, *o], p.weight.shape()));
            }
            if p.bias.shape() != [*o] {
                return Err(Error::shape(format!("affine layer {k} bias"), &[*o], p.bias.shape()));
            }
        }
        if !params.is_finite() {
            return Err(Error::InvalidSpec("non-finite parameters".into()));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_parts(self) -> (ModelSpec, ModelParams) {
        (self.spec, self.params)
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes()
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.len() != self.spec.input_len() {
            return Err(Error::shape("model input", &self.spec.input_shape, x.shape()));
        }
        Ok(())
    }

    fn check_mask(&self, mask: Option<&DropoutMask>) -> Result<()> {
        if let Some(mask) = mask {
            let layers = self.spec.dropout_layers();
            if mask.masks.len() != layers.len() {
                return Err(Error::InvalidSpec(format!(
                    "mask has {} layers, model has {} dropout layers",
                    mask.masks.len(),
                    layers.len()
                )));
            }
            for (m, &(idx, w)) in mask.masks.iter().zip(&layers) {
                if m.len() != w {
                    return Err(Error::shape(format!("dropout mask for layer {idx}"), &[w], m.shape()));
                }
            }
        }
        Ok(())
    }

    /// Maps layer index to its affine parameter index or dropout ordinal.
    fn ordinal(&self, layer: usize) -> usize {
        let kind = std::mem::discriminant(&self.spec.layers[layer]);
        self.spec.layers[..layer]
            .iter()
            .filter(|l| std::mem::discriminant(*l) == kind)
            .count()
    }

    pub fn forward(&self, x: &Tensor, mask: Option<&DropoutMask>) -> Result<Forward> {
        self.check_input(x)?;
        self.check_mask(mask)?;
        let trace = self.forward_span(0, self.spec.softmax_index(), x.data(), mask);
        Ok(self.outputs(&trace))
    }

    pub fn probs(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward(x, None)?.probs.into_data())
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(self.forward(x, None)?.logits.argmax())
    }

    fn outputs(&self, trace: &Trace) -> Forward {
        let logits = trace.output().to_vec();
        let probs = softmax(&logits);
        let features = trace
            .input_of(self.spec.final_affine_index())
            .map(|f| f.to_vec())
            .unwrap_or_default();
        Forward {
            logits: Tensor::vector(logits),
            probs: Tensor::vector(probs),
            features: Tensor::vector(features),
        }
    }

    /// Full trace from input to logits.
    pub fn trace(&self, x: &Tensor, mask: Option<&DropoutMask>) -> Result<Trace> {
        self.check_input(x)?;
        self.check_mask(mask)?;
        Ok(self.forward_span(0, self.spec.softmax_index(), x.data(), mask))
    }

    pub fn logits_end(&self) -> usize {
        self.spec.softmax_index()
    }

    /// Runs layers `start..end` on `input`. Callers guarantee shapes.
    pub fn forward_span(&self, start: usize, end: usize, input: &[f64], mask: Option<&DropoutMask>) -> Trace {
        let mut acts = Vec::with_capacity(end - start + 1);
        acts.push(input.to_vec());
        for idx in start..end {
            let x = acts.last().expect("non-empty");
            let y = match &self.spec.layers[idx] {
                Layer::Affine { .. } => {
                    let p = &self.params.affine[self.ordinal(idx)];
                    let mut y = p.bias.data().to_vec();
                    let out = y.len();
                    let w = p.weight.data();
                    for (i, &xi) in x.iter().enumerate() {
                        if xi != 0.0 {
                            axpy(xi, &w[i * out..(i + 1) * out], &mut y);
                        }
                    }
                    y
                }
                Layer::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
                Layer::Dropout { .. } => match mask {
                    Some(m) => {
                        let k = self.ordinal(idx);
                        let (bits, scale) = (m.masks[k].data(), m.scales[k]);
                        x.iter().zip(bits).map(|(&v, &b)| v * b * scale).collect()
                    }
                    None => x.clone(),
                },
                Layer::Softmax => softmax(x),
            };
            acts.push(y);
        }
        Trace { start, end, acts }
    }

    /// Backpropagates `grad_out` (gradient w.r.t. the trace output) to the
    /// trace input, accumulating parameter gradients when requested.
    pub fn backward_span(
        &self,
        trace: &Trace,
        mask: Option<&DropoutMask>,
        grad_out: &[f64],
        mut param_grads: Option<&mut ModelParams>,
    ) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        for idx in (trace.start..trace.end).rev() {
            let x = &trace.acts[idx - trace.start];
            g = match &self.spec.layers[idx] {
                Layer::Affine { inputs, outputs } => {
                    let k = self.ordinal(idx);
                    let w = self.params.affine[k].weight.data();
                    if let Some(grads) = param_grads.as_deref_mut() {
                        let gp = &mut grads.affine[k];
                        axpy(1.0, &g, gp.bias.data_mut());
                        let gw = gp.weight.data_mut();
                        for (i, &xi) in x.iter().enumerate() {
                            if xi != 0.0 {
                                axpy(xi, &g, &mut gw[i * outputs..(i + 1) * outputs]);
                            }
                        }
                    }
                    if idx == 0 && param_grads.is_some() && trace.start == 0 {
                        // input gradient unused during training
                        vec![0.0; *inputs]
                    } else {
                        (0..*inputs).map(|i| dot(&w[i * outputs..(i + 1) * outputs], &g)).collect()
                    }
                }
                Layer::Relu => x.iter().zip(&g).map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 }).collect(),
                Layer::Dropout { .. } => match mask {
                    Some(m) => {
                        let k = self.ordinal(idx);
                        let (bits, scale) = (m.masks[k].data(), m.scales[k]);
                        g.iter().zip(bits).map(|(&gi, &b)| gi * b * scale).collect()
                    }
                    None => g,
                },
                Layer::Softmax => {
                    let p = &trace.acts[idx - trace.start + 1];
                    softmax_backward(p, &g)
                }
            };
        }
        g
    }

    /// Value of `loss` at `x` and its gradient with respect to `x`.
    pub fn input_gradient(&self, x: &Tensor, loss: &ScalarLoss, mask: Option<&DropoutMask>) -> Result<(f64, Tensor)> {
        let trace = self.trace(x, mask)?;
        let (value, dlogits) = loss.evaluate(trace.output())?;
        let grad = self.backward_span(&trace, mask, &dlogits, None);
        Ok((value, x.with_data(grad)))
    }

    /// Gradient of a scalar function of the penultimate features.
    pub fn feature_backward(&self, trace: &Trace, mask: Option<&DropoutMask>, dfeatures: &[f64]) -> Vec<f64> {
        let f = self.spec.final_affine_index();
        let prefix = Trace {
            start: trace.start,
            end: f,
            acts: trace.acts[..=(f - trace.start)].to_vec(),
        };
        self.backward_span(&prefix, mask, dfeatures, None)
    }

    pub fn accuracy(&self, images: &[Tensor], labels: &[usize]) -> Result<f64> {
        if images.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0usize;
        for (x, &y) in images.iter().zip(labels) {
            if self.predict(x)? == y {
                correct += 1;
            }
        }
        Ok(correct as f64 / images.len() as f64)
    }
}
