use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{BudgetProbe, DataSource, ExperimentConfig, SigmaRule};
use crate::data::{load_idx, synth_blobs, Dataset, Splits};
use crate::detector::{compute_stats, DetectorConfig};
use crate::diffnet::{train, Checkpoint, CheckpointMeta, Model, ModelSpec};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    match &config.data.source {
        DataSource::Idx { images, labels } => load_idx(config.resolve(images), config.resolve(labels)),
        DataSource::Blobs {
            n_per_class,
            classes,
            dim,
            separation,
        } => synth_blobs(*n_per_class, *classes, *dim, *separation, config.data.split_seed),
    }
}

/// The four disjoint splits of a dataset.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub train: Dataset,
    pub calibration: Dataset,
    pub audit: Dataset,
    pub eval: Dataset,
}

pub fn split_dataset(dataset: &Dataset, config: &ExperimentConfig) -> Result<SplitData> {
    let s = Splits::new(dataset.len(), config.data.splits, config.data.split_seed)?;
    Ok(SplitData {
        train: dataset.subset(&s.train, "train"),
        calibration: dataset.subset(&s.calibration, "calibration"),
        audit: dataset.subset(&s.audit, "audit"),
        eval: dataset.subset(&s.eval, "eval"),
    })
}

pub fn model_spec(config: &ExperimentConfig, dataset: &Dataset) -> ModelSpec {
    ModelSpec::mlp(dataset.image_shape(), &config.model.hidden, dataset.num_classes, config.model.dropout)
}

/// Identifies everything that determines the trained weights.
fn training_key(config: &ExperimentConfig) -> String {
    let key = serde_json::json!({
        "model": {
            "hidden": config.model.hidden,
            "dropout": config.model.dropout,
            "training": config.model.training,
        },
        "data": config.data,
    });
    format!("training:{}", hex::encode(Sha256::digest(key.to_string())))
}

/// Loads the checkpoint at `path` if it was trained under the same
/// settings, otherwise trains a fresh model and saves it there.
pub fn load_or_train(config: &ExperimentConfig, splits: &SplitData, path: &Path) -> Result<Model> {
    let key = training_key(config);
    if path.exists() {
        let ckpt = Checkpoint::load(path)?;
        if ckpt.meta.note == key {
            return ckpt.model();
        }
        log::info!("checkpoint {} was trained under other settings; retraining", path.display());
    }
    let trained = train_model(config, splits)?;
    let mut meta = CheckpointMeta::from(&trained.1);
    meta.note = key;
    Checkpoint::new(&trained.0, meta).save(path)?;
    Ok(trained.0)
}

pub fn train_model(config: &ExperimentConfig, splits: &SplitData) -> Result<(Model, crate::diffnet::TrainReport)> {
    let spec = model_spec(config, &splits.train);
    let t = train(&spec, &splits.train, Some(&splits.eval), &config.model.training)?;
    log::info!(
        "trained {:?}: train accuracy {:.4}, eval accuracy {:?}",
        config.model.hidden,
        t.report.train_accuracy,
        t.report.test_accuracy
    );
    Ok((t.model, t.report))
}

/// Images of `dataset` the model classifies correctly, with their indices.
pub fn correctly_classified(model: &Model, dataset: &Dataset) -> Result<(Vec<usize>, Vec<Tensor>)> {
    let ok = par::try_map(dataset.len(), |i| Ok(model.predict(&dataset.image(i))? == dataset.labels[i]))?;
    let idx: Vec<usize> = (0..dataset.len()).filter(|&i| ok[i]).collect();
    let images = idx.iter().map(|&i| dataset.image(i)).collect();
    Ok((idx, images))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSelection {
    pub sigma: f64,
    pub clean_accuracy: f64,
    /// `(sigma, accuracy under noise)` for every candidate.
    pub curve: Vec<(f64, f64)>,
}

/// Largest noise level in the grid whose accuracy drop on `dataset` stays
/// within the allowed margin; the smallest candidate if none does.
pub fn select_sigma(model: &Model, dataset: &Dataset, rule: &SigmaRule, seed: u64) -> Result<SigmaSelection> {
    if rule.grid.is_empty() || rule.grid.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidConfig("noise grid must be nonempty and positive".into()));
    }
    let images = dataset.images_vec();
    let clean_accuracy = model.accuracy(&images, &dataset.labels)?;
    let mut grid = rule.grid.clone();
    grid.sort_by(f64::total_cmp);
    let mut curve = Vec::new();
    for &sigma in &grid {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let hits = par::try_map(images.len(), |i| {
            let mut rng = stream(seed, i as u64, Stream::Noise);
            let noisy = images[i].with_data(images[i].data().iter().map(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0)).collect());
            Ok(model.predict(&noisy)? == dataset.labels[i])
        })?;
        curve.push((sigma, hits.iter().filter(|&&h| h).count() as f64 / images.len() as f64));
    }
    let sigma = curve
        .iter()
        .filter(|(_, acc)| clean_accuracy - acc <= rule.max_drop + 1e-12)
        .map(|(s, _)| *s)
        .last()
        .unwrap_or(grid[0]);
    Ok(SigmaSelection {
        sigma,
        clean_accuracy,
        curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRound {
    pub radius: f64,
    pub targeted_flipped: f64,
    pub untargeted_flipped: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetChoice {
    pub radius: f64,
    pub c2t_cap: usize,
    pub c2u_cap: usize,
    pub rounds: Vec<BudgetRound>,
}

fn quantile_steps(mut steps: Vec<usize>, q: f64) -> usize {
    steps.sort_unstable();
    let i = ((steps.len() as f64 * q).ceil() as usize).clamp(1, steps.len()) - 1;
    steps[i]
}

/// Smallest probe radius at which both C2 attacks flip the required share
/// of `images` within the configured caps; the caps then shrink to a
/// multiple of the observed quantile.
pub fn probe_budget(model: &Model, images: &[Tensor], ids: &[u64], detector: &DetectorConfig, probe: &BudgetProbe) -> Result<BudgetChoice> {
    if images.is_empty() || probe.radii.is_empty() {
        return Err(Error::InvalidConfig("budget probe needs images and radii".into()));
    }
    let mut rounds = Vec::new();
    let mut radii = probe.radii.clone();
    radii.sort_by(f64::total_cmp);
    let mut last = None;
    for &radius in &radii {
        let mut cfg = detector.clone();
        cfg.c2t_attack.tau = radius;
        cfg.c2u_attack.tau = radius;
        let stats = par::try_map(images.len(), |i| compute_stats(model, &images[i], &cfg, ids[i]))?;
        let n = stats.len() as f64;
        let t = stats.iter().filter(|s| s.k_t.flipped).count() as f64 / n;
        let u = stats.iter().filter(|s| s.k_u.flipped).count() as f64 / n;
        rounds.push(BudgetRound {
            radius,
            targeted_flipped: t,
            untargeted_flipped: u,
        });
        last = Some((radius, stats));
        if t >= probe.coverage && u >= probe.coverage {
            break;
        }
    }
    let (radius, stats) = last.expect("at least one radius");
    let cap = |steps: Vec<usize>, limit: usize| {
        let q = quantile_steps(steps, probe.coverage) as f64;
        ((probe.cap_factor * q).ceil() as usize).max(probe.min_cap).clamp(1, limit)
    };
    Ok(BudgetChoice {
        radius,
        c2t_cap: cap(stats.iter().map(|s| s.k_t.steps).collect(), detector.c2t_attack.steps),
        c2u_cap: cap(stats.iter().map(|s| s.k_u.steps).collect(), detector.c2u_attack.steps),
        rounds,
    })
}

impl BudgetChoice {
    pub fn apply(&self, detector: &mut DetectorConfig) {
        detector.c2t_attack.tau = self.radius;
        detector.c2u_attack.tau = self.radius;
        detector.c2t_attack.steps = self.c2t_cap;
        detector.c2u_attack.steps = self.c2u_cap;
    }
}
