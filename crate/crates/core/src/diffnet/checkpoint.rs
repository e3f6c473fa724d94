use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelParams, ModelSpec, TrainReport};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "advpocket-model/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub note: String,
}

impl From<&TrainReport> for CheckpointMeta {
    fn from(r: &TrainReport) -> Self {
        Self {
            seed: r.seed,
            train_accuracy: r.train_accuracy,
            test_accuracy: r.test_accuracy,
            note: String::new(),
        }
    }
}

/// Self-describing JSON container for a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub checksum: String,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(model: &Model, meta: CheckpointMeta) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            spec: model.spec().clone(),
            params: model.params().clone(),
            checksum: model.checksum(),
            meta,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!(
                "checkpoint format {:?}, expected {CHECKPOINT_FORMAT:?}",
                ckpt.format
            )));
        }
        if ckpt.params.checksum() != ckpt.checksum {
            return Err(Error::Format("checkpoint checksum does not match its weights".into()));
        }
        Ok(ckpt)
    }

    pub fn model(&self) -> Result<Model> {
        Model::new(self.spec.clone(), self.params.clone())
    }
}
