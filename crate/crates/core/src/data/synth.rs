use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

const BLOB_STD: f64 = 0.1;

/// Class centre directions: centred one-hot vectors when `dim >= classes`,
/// otherwise points on the unit circle (or line, for `dim == 1`).
fn vertex(class: usize, classes: usize, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    if dim >= classes {
        for (j, vj) in v.iter_mut().enumerate().take(classes) {
            *vj = if j == class { 1.0 } else { 0.0 } - 1.0 / classes as f64;
        }
    } else if dim == 1 {
        v[0] = class as f64 - (classes as f64 - 1.0) / 2.0;
    } else {
        let a = std::f64::consts::TAU * class as f64 / classes as f64;
        v[0] = a.cos();
        v[1] = a.sin();
    }
    v
}

/// Gaussian blobs (std 0.1) centred at `0.5 + separation * vertex / 4`,
/// clamped to the unit box. Samples alternate classes.
pub fn synth_blobs(n_per_class: usize, classes: usize, dim: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if dim < 1 {
        return Err(Error::InvalidConfig("blob dimension must be at least 1".into()));
    }
    if classes < 2 {
        return Err(Error::InvalidConfig("at least two classes are required".into()));
    }
    let mut rng = rng::stream(seed, 0, Stream::Blobs);
    let noise = Normal::new(0.0, BLOB_STD).expect("valid std");
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|c| vertex(c, classes, dim).iter().map(|v| 0.5 + separation * v / 4.0).collect())
        .collect();
    let mut data = Vec::with_capacity(n_per_class * classes * dim);
    let mut labels = Vec::with_capacity(n_per_class * classes);
    for _ in 0..n_per_class {
        for (c, centre) in centres.iter().enumerate() {
            data.extend(centre.iter().map(|m| (m + noise.sample(&mut rng)).clamp(0.0, 1.0)));
            labels.push(c);
        }
    }
    let images = Tensor::new(vec![labels.len(), dim], data)?;
    Dataset::new(images, labels, classes, "synthetic", &format!("blobs(seed={seed})"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_dataset() {
        let a = synth_blobs(20, 3, 2, 1.0, 9).unwrap();
        let b = synth_blobs(20, 3, 2, 1.0, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_blobs(20, 3, 2, 1.0, 10).unwrap());
    }

    #[test]
    fn zero_dim_is_rejected() {
        assert!(synth_blobs(5, 2, 0, 1.0, 0).is_err());
    }
}
