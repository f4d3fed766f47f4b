use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GnnError, Model, ModelConfig, ParamStore};
use crate::grid::feature_order_hash;

pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model: architecture, parameters and the feature layout they
/// were trained against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub feature_hash: String,
    pub config: ModelConfig,
    pub tensors: ParamStore,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            feature_hash: feature_order_hash(),
            config: model.config.clone(),
            tensors: model.params.clone(),
        }
    }

    /// Validates version, feature layout and tensor shapes.
    pub fn into_model(self) -> Result<Model, GnnError> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(GnnError::Checkpoint(format!("unsupported format version {}", self.format_version)));
        }
        let expected = feature_order_hash();
        if self.feature_hash != expected {
            return Err(GnnError::FeatureHash {
                expected,
                found: self.feature_hash,
            });
        }
        let reference = ParamStore::init(&self.config, 0);
        for (name, t) in reference.iter() {
            let got = self.tensors.get(name).ok_or_else(|| GnnError::MissingParam(name.clone()))?;
            if got.shape() != t.value.shape() || got.data().len() != got.rows() * got.cols() {
                return Err(GnnError::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    got.shape(),
                    t.value.shape()
                )));
            }
            if self.tensors.group(name) != Some(t.group) {
                return Err(GnnError::Checkpoint(format!("tensor {name} is in the wrong freeze group")));
            }
        }
        for (name, t) in self.tensors.iter() {
            if !reference.contains(name) && !(name.starts_with("hub.eta.") && t.value.shape() == (1, 1)) {
                return Err(GnnError::Checkpoint(format!("unexpected tensor {name}")));
            }
        }
        Ok(Model {
            config: self.config,
            params: self.tensors,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), GnnError> {
        fs::write(path, self.to_json()).map_err(|source| GnnError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Model, GnnError> {
        let text = fs::read_to_string(path).map_err(|source| GnnError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| GnnError::Checkpoint(e.to_string()))?;
        ckpt.into_model()
    }
}
