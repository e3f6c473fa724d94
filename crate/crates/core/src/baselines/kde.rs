use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffnet::log_sum_exp;
use crate::error::{Error, Result};

/// Class-conditional Gaussian kernel density over feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    pub bandwidth: f64,
    pub dim: usize,
    /// Row-major points of each class.
    pub classes: Vec<Vec<f64>>,
}

/// Median pairwise Euclidean distance over an evenly strided subsample of
/// at most 400 points.
pub fn median_bandwidth(features: &[Vec<f64>]) -> f64 {
    let stride = features.len().div_ceil(400).max(1);
    let sample: Vec<&Vec<f64>> = features.iter().step_by(stride).collect();
    let mut dists = Vec::with_capacity(sample.len() * sample.len() / 2);
    for i in 0..sample.len() {
        for j in i + 1..sample.len() {
            dists.push(sq_dist(sample[i], sample[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    let m = dists[dists.len() / 2];
    if m > 0.0 { m } else { 1.0 }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Fits one kernel density per class. `bandwidth` defaults to the median
/// heuristic.
pub fn kde_fit(features: &[Vec<f64>], labels: &[usize], num_classes: usize, bandwidth: Option<f64>) -> Result<KdeModel> {
    if features.len() != labels.len() {
        return Err(Error::CountMismatch {
            images: features.len(),
            labels: labels.len(),
        });
    }
    let dim = features.first().map_or(0, |f| f.len());
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::InvalidConfig("feature vectors differ in length".into()));
    }
    let bandwidth = bandwidth.unwrap_or_else(|| median_bandwidth(features));
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidConfig(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let mut classes = vec![Vec::new(); num_classes];
    for (f, &y) in features.iter().zip(labels) {
        if y >= num_classes {
            return Err(Error::InvalidLabel {
                label: y,
                classes: num_classes,
            });
        }
        classes[y].extend_from_slice(f);
    }
    if let Some(c) = classes.iter().position(|c| c.is_empty()) {
        return Err(Error::EmptyBucket(c));
    }
    Ok(KdeModel { bandwidth, dim, classes })
}

impl KdeModel {
    pub fn class_count(&self, class: usize) -> usize {
        self.classes[class].len() / self.dim.max(1)
    }

    fn check(&self, class: usize, f: &[f64]) -> Result<()> {
        if class >= self.classes.len() {
            return Err(Error::InvalidLabel {
                label: class,
                classes: self.classes.len(),
            });
        }
        if f.len() != self.dim {
            return Err(Error::shape("kde query", &[self.dim], &[f.len()]));
        }
        Ok(())
    }

    fn exponents(&self, class: usize, f: &[f64]) -> Vec<f64> {
        let b2 = 2.0 * self.bandwidth * self.bandwidth;
        let dim = self.dim.max(1);
        self.classes[class].chunks(dim).map(|p| -sq_dist(f, p) / b2).collect()
    }

    fn log_norm(&self, class: usize) -> f64 {
        -(self.class_count(class) as f64).ln()
            - 0.5 * self.dim as f64 * (2.0 * std::f64::consts::PI * self.bandwidth * self.bandwidth).ln()
    }

    /// Natural log of the normalized density of `class` at `f`.
    pub fn log_density(&self, class: usize, f: &[f64]) -> Result<f64> {
        self.check(class, f)?;
        Ok(log_sum_exp(&self.exponents(class, f)) + self.log_norm(class))
    }

    /// Log-density and its gradient with respect to `f`.
    pub fn log_density_grad(&self, class: usize, f: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(class, f)?;
        let e = self.exponents(class, f);
        let lse = log_sum_exp(&e);
        let b2 = self.bandwidth * self.bandwidth;
        let mut grad = vec![0.0; self.dim];
        for (w, p) in e.iter().zip(self.classes[class].chunks(self.dim.max(1))) {
            let w = (w - lse).exp();
            if w == 0.0 {
                continue;
            }
            for ((g, a), b) in grad.iter_mut().zip(f).zip(p) {
                *g -= w * (a - b) / b2;
            }
        }
        Ok((lse + self.log_norm(class), grad))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Density (not log) of `class` at `feature`. Underflows to 0 in high
/// dimensions; prefer [`KdeModel::log_density`].
pub fn kde_density(kde: &KdeModel, class: usize, feature: &[f64]) -> Result<f64> {
    Ok(kde.log_density(class, feature)?.exp())
}
