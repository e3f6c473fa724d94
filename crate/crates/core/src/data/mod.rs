//! Datasets, IDX ingestion, synthetic blobs, splits and pass sets.

mod container;
mod idx;
mod pass_set;
mod splits;
mod synth;

pub use container::{file_checksum, read_container, write_container, DataManifest, CONTAINER_MAGIC};
pub use idx::{load_idx, IMAGE_MAGIC, LABEL_MAGIC};
pub use pass_set::{build_pass_set, PassSet};
pub use splits::{SplitSizes, Splits};
pub use synth::synth_blobs;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labelled images with pixels in `[0, 1]`. `images` has shape
/// `[N, ...image_shape]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: String,
    pub source: String,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize, split: &str, source: &str) -> Result<Self> {
        let n = images.shape().first().copied().unwrap_or(0);
        if n != labels.len() {
            return Err(Error::CountMismatch {
                images: n,
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidLabel {
                label: bad,
                classes: num_classes,
            });
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Format("pixel values outside [0, 1]".into()));
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            split: split.to_string(),
            source: source.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn image_len(&self) -> usize {
        self.image_shape().iter().product()
    }

    pub fn image_slice(&self, i: usize) -> &[f64] {
        let d = self.image_len();
        &self.images.data()[i * d..(i + 1) * d]
    }

    pub fn image(&self, i: usize) -> Tensor {
        Tensor::new(self.image_shape().to_vec(), self.image_slice(i).to_vec()).expect("image shape")
    }

    pub fn images_vec(&self) -> Vec<Tensor> {
        (0..self.len()).map(|i| self.image(i)).collect()
    }

    pub fn subset(&self, indices: &[usize], split: &str) -> Dataset {
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            data.extend_from_slice(self.image_slice(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.image_shape());
        Dataset {
            images: Tensor::new(shape, data).expect("subset shape"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split: split.to_string(),
            source: self.source.clone(),
        }
    }
}
