//! Independent oracles shared by unit tests.

use crate::diffnet::{Layer, Model, ModelParams, ModelSpec};
use crate::tensor::Tensor;

pub use crate::harness::gradcheck::{fd_gradient, random_input, random_mlp, rel_error};

/// Linear-softmax model with the given weight matrix `[inputs, classes]`.
pub fn linear_model(weight: Vec<f64>, bias: Vec<f64>) -> Model {
    let classes = bias.len();
    let inputs = weight.len() / classes;
    let spec = ModelSpec {
        input_shape: vec![inputs],
        layers: vec![Layer::Affine { inputs, outputs: classes }, Layer::Softmax],
    };
    let params = ModelParams {
        affine: vec![crate::diffnet::AffineParams {
            weight: Tensor::new(vec![inputs, classes], weight).unwrap(),
            bias: Tensor::vector(bias),
        }],
    };
    Model::new(spec, params).unwrap()
}
