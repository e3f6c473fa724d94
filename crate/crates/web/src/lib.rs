//! A two-dimensional playground for the detector, compiled to WebAssembly.
//!
//! [`Playground`] trains a small network on three Gaussian blobs in the unit
//! square and answers the questions the demo page asks: where the decision
//! regions are, how an attack moves a point, how the detector statistics vary
//! over the plane, and how the white-box loss terms evolve.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use advpocket::adaptive::{run_whitebox_snapshots, LossTerm, WhiteboxConfig};
use advpocket::data::synth_blobs;
use advpocket::detector::{stat_c1, stat_c2t, stat_c2u, DetectorConfig};
use advpocket::diffnet::{train, Model, ModelSpec, TrainingConfig};
use advpocket::rng::{stream, Stream};
use advpocket::{Result, Tensor};

pub const CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Delta,
    TargetedSteps,
    UntargetedSteps,
}

impl Statistic {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "delta" => Some(Statistic::Delta),
            "k_t" => Some(Statistic::TargetedSteps),
            "k_u" => Some(Statistic::UntargetedSteps),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointReport {
    pub prediction: usize,
    pub probs: Vec<f64>,
    pub delta: f64,
    pub k_t: f64,
    pub k_u: f64,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackView {
    /// Iterates from the clean point to the final adversarial.
    pub path: Vec<[f64; 2]>,
    pub success: bool,
    pub final_prediction: usize,
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
    pub l3: Vec<f64>,
    pub l4: Vec<f64>,
}

pub struct Playground {
    model: Model,
    detector: DetectorConfig,
    accuracy: f64,
}

fn point(x: f64, y: f64) -> Tensor {
    Tensor::vector(vec![x.clamp(0.0, 1.0), y.clamp(0.0, 1.0)])
}

/// Cell centres of a `resolution x resolution` grid over the unit square,
/// row by row from the top.
pub fn grid(resolution: usize) -> impl Iterator<Item = (f64, f64)> {
    let r = resolution as f64;
    (0..resolution).flat_map(move |row| (0..resolution).map(move |col| ((col as f64 + 0.5) / r, 1.0 - (row as f64 + 0.5) / r)))
}

impl Playground {
    pub fn new(seed: u64, separation: f64) -> Result<Self> {
        let data = synth_blobs(150, CLASSES, 2, separation, seed)?;
        let spec = ModelSpec::mlp(&[2], &[24, 24], CLASSES, None);
        let training = TrainingConfig {
            epochs: 40,
            learning_rate: 0.01,
            seed,
            ..TrainingConfig::default()
        };
        let trained = train(&spec, &data, None, &training)?;
        let mut detector = DetectorConfig {
            sigma: 0.05,
            n_noise: 8,
            seed,
            ..DetectorConfig::default()
        };
        for a in [&mut detector.c2t_attack, &mut detector.c2u_attack] {
            a.lr = 0.01;
            a.steps = 150;
            a.tau = 0.5;
        }
        Ok(Self {
            model: trained.model,
            detector,
            accuracy: trained.report.train_accuracy,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn accuracy(&self) -> f64 {
        self.accuracy
    }

    /// Predicted class per grid cell.
    pub fn decision_field(&self, resolution: usize) -> Result<Vec<u8>> {
        grid(resolution).map(|(x, y)| Ok(self.model.predict(&point(x, y))? as u8)).collect()
    }

    fn detector_with(&self, sigma: f64) -> DetectorConfig {
        DetectorConfig {
            sigma,
            ..self.detector.clone()
        }
    }

    fn target_for(&self, prediction: usize) -> usize {
        (prediction + 1) % CLASSES
    }

    /// One statistic per grid cell; step counts are interpolated scores.
    pub fn statistic_field(&self, statistic: Statistic, sigma: f64, resolution: usize) -> Result<Vec<f64>> {
        let config = self.detector_with(sigma);
        grid(resolution)
            .enumerate()
            .map(|(i, (x, y))| {
                let p = point(x, y);
                match statistic {
                    Statistic::Delta => stat_c1(&self.model, &p, sigma, config.n_noise, &mut stream(config.seed, i as u64, Stream::Noise)),
                    Statistic::TargetedSteps => {
                        let target = self.target_for(self.model.predict(&p)?);
                        Ok(stat_c2t(&self.model, &p, target, &config.c2t_attack)?.score)
                    }
                    Statistic::UntargetedSteps => Ok(stat_c2u(&self.model, &p, &config.c2u_attack)?.score),
                }
            })
            .collect()
    }

    pub fn inspect(&self, x: f64, y: f64, sigma: f64) -> Result<PointReport> {
        let p = point(x, y);
        let config = self.detector_with(sigma);
        let prediction = self.model.predict(&p)?;
        let target = self.target_for(prediction);
        Ok(PointReport {
            prediction,
            probs: self.model.probs(&p)?,
            delta: stat_c1(&self.model, &p, sigma, config.n_noise, &mut stream(config.seed, 0, Stream::Noise))?,
            k_t: stat_c2t(&self.model, &p, target, &config.c2t_attack)?.score,
            k_u: stat_c2u(&self.model, &p, &config.c2u_attack)?.score,
            target,
        })
    }

    /// Gray-box (`lambda == None`) or white-box attack from `(x, y)` towards
    /// `target`, with every iterate.
    #[allow(clippy::too_many_arguments)]
    pub fn attack(&self, x: f64, y: f64, target: usize, lr: f64, steps: usize, tau: f64, sigma: f64, lambda: Option<f64>) -> Result<AttackView> {
        let p = point(x, y);
        let source = self.model.predict(&p)?;
        let config = WhiteboxConfig {
            lambda: lambda.unwrap_or(1.0),
            alpha: 0.05,
            lr,
            steps,
            tau,
            sigma,
            noise_samples: 4,
            class_samples: 2,
            losses: match lambda {
                Some(_) => vec![LossTerm::L1, LossTerm::L2, LossTerm::L3, LossTerm::L4],
                None => vec![LossTerm::L1],
            },
            seed: self.detector.seed,
            ..WhiteboxConfig::default()
        };
        let checkpoints: Vec<usize> = (0..=steps).collect();
        let (result, snaps) = run_whitebox_snapshots(&self.model, &p, source, target, &config, 0, &checkpoints)?;
        Ok(AttackView {
            path: snaps.iter().map(|s| [s.data()[0], s.data()[1]]).collect(),
            success: result.attack.success,
            final_prediction: result.attack.final_prediction,
            l1: result.losses.l1,
            l2: result.losses.l2,
            l3: result.losses.l3,
            l4: result.losses.l4,
        })
    }
}

fn js_error(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Browser handle around [`Playground`]. Structured results are returned
/// as JSON strings.
#[wasm_bindgen]
pub struct Demo {
    inner: Playground,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, separation: f64) -> std::result::Result<Demo, JsError> {
        Ok(Demo {
            inner: Playground::new(seed as u64, separation).map_err(js_error)?,
        })
    }

    pub fn accuracy(&self) -> f64 {
        self.inner.accuracy()
    }

    #[wasm_bindgen(js_name = decisionField)]
    pub fn decision_field(&self, resolution: usize) -> std::result::Result<Vec<u8>, JsError> {
        self.inner.decision_field(resolution).map_err(js_error)
    }

    #[wasm_bindgen(js_name = statisticField)]
    pub fn statistic_field(&self, statistic: &str, sigma: f64, resolution: usize) -> std::result::Result<Vec<f64>, JsError> {
        let s = Statistic::parse(statistic).ok_or_else(|| JsError::new(&format!("unknown statistic `{statistic}`")))?;
        self.inner.statistic_field(s, sigma, resolution).map_err(js_error)
    }

    pub fn inspect(&self, x: f64, y: f64, sigma: f64) -> std::result::Result<String, JsError> {
        let r = self.inner.inspect(x, y, sigma).map_err(js_error)?;
        serde_json::to_string(&r).map_err(js_error)
    }

    /// `lambda < 0` runs the gray-box attack.
    #[allow(clippy::too_many_arguments)]
    pub fn attack(&self, x: f64, y: f64, target: usize, lr: f64, steps: usize, tau: f64, sigma: f64, lambda: f64) -> std::result::Result<String, JsError> {
        let lambda = (lambda >= 0.0).then_some(lambda);
        let v = self.inner.attack(x, y, target, lr, steps, tau, sigma, lambda).map_err(js_error)?;
        serde_json::to_string(&v).map_err(js_error)
    }
}
