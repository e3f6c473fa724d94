use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::diffnet::Model;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Correctly classified evaluation images with an attack target each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassSet {
    /// Indices into the dataset the pass set was drawn from.
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub targets: Vec<usize>,
    pub seed: u64,
}

impl PassSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn truncate(&mut self, n: usize) {
        self.indices.truncate(n);
        self.labels.truncate(n);
        self.targets.truncate(n);
    }
}

/// Class-balanced sample of `n` images the model classifies correctly.
/// The first `n % C` classes contribute one extra image. Members are
/// interleaved by class so any prefix stays roughly balanced.
pub fn build_pass_set(model: &Model, dataset: &Dataset, n: usize, seed: u64) -> Result<PassSet> {
    let c = dataset.num_classes;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for i in 0..dataset.len() {
        if model.predict(&dataset.image(i))? == dataset.labels[i] {
            by_class[dataset.labels[i]].push(i);
        }
    }
    let mut rng = rng::stream(seed, 0, Stream::PassSet);
    let mut chosen: Vec<Vec<usize>> = Vec::with_capacity(c);
    for (class, members) in by_class.iter_mut().enumerate() {
        let quota = n / c + usize::from(class < n % c);
        if members.len() < quota {
            return Err(Error::InsufficientCorrect {
                class,
                available: members.len(),
                required: quota,
            });
        }
        members.shuffle(&mut rng);
        chosen.push(members[..quota].to_vec());
    }
    let mut indices = Vec::with_capacity(n);
    for round in 0.. {
        let before = indices.len();
        for members in &chosen {
            if let Some(&i) = members.get(round) {
                indices.push(i);
            }
        }
        if indices.len() == before {
            break;
        }
    }
    let labels: Vec<usize> = indices.iter().map(|&i| dataset.labels[i]).collect();
    let targets = indices
        .iter()
        .zip(&labels)
        .map(|(&i, &y)| {
            let mut r = rng::stream(seed, i as u64, Stream::TargetChoice);
            let t = r.random_range(0..c - 1);
            if t >= y {
                t + 1
            } else {
                t
            }
        })
        .collect();
    Ok(PassSet {
        indices,
        labels,
        targets,
        seed,
    })
}
