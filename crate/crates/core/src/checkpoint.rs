//! Versioned, self-describing JSON checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ForecastSettings, Scaler, Task};
use crate::model::{ModelConfig, ModelError, PhmmModel, SequenceModel};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot read checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint format version {found} is not supported (this build reads version {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint does not match its model config: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub seed: u64,
    pub task: Task,
    /// Scaling fitted on the training split, applied again at evaluation.
    pub scaler: Option<Scaler>,
    /// Present for forecasting models.
    #[serde(default)]
    pub forecast: Option<ForecastSettings>,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    pub fn from_model<M: SequenceModel + ?Sized>(
        model: &M,
        seed: u64,
        task: Task,
        scaler: Option<Scaler>,
        forecast: Option<ForecastSettings>,
    ) -> Self {
        let params = model
            .params()
            .iter()
            .map(|(name, t)| ParamRecord {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        Checkpoint {
            format_version: FORMAT_VERSION,
            config: model.config().clone(),
            seed,
            task,
            scaler,
            forecast,
            params,
        }
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoints serialize") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| CheckpointError::Format(e.to_string()))?;
        let version = raw
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| CheckpointError::Format("missing integer format_version".into()))?;
        if version != FORMAT_VERSION as u64 {
            return Err(CheckpointError::Version {
                found: u32::try_from(version).unwrap_or(u32::MAX),
            });
        }
        serde_json::from_value(raw).map_err(|e| CheckpointError::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Checkpoint::from_json(&text)
    }

    /// Rebuild the model and check every stored parameter against the
    /// layout its config implies.
    pub fn to_model(&self) -> Result<PhmmModel> {
        let mut model = PhmmModel::new(self.config.clone(), self.seed)?;
        let store = model.params_mut();
        if store.len() != self.params.len() {
            return Err(CheckpointError::Mismatch(format!(
                "expected {} parameters, found {}",
                store.len(),
                self.params.len()
            )));
        }
        let ids: Vec<_> = store.ids().collect();
        for (id, rec) in ids.into_iter().zip(&self.params) {
            let name = store.name(id).to_string();
            if name != rec.name {
                return Err(CheckpointError::Mismatch(format!("expected parameter {name}, found {}", rec.name)));
            }
            let t = store.get_mut(id);
            if t.shape() != rec.shape.as_slice() {
                return Err(CheckpointError::Mismatch(format!(
                    "parameter {name} has shape {:?}, the config needs {:?}",
                    rec.shape,
                    t.shape()
                )));
            }
            if rec.data.len() != t.data().len() || rec.data.iter().any(|v| !v.is_finite()) {
                return Err(CheckpointError::Mismatch(format!(
                    "parameter {name} data is not {} finite values",
                    t.data().len()
                )));
            }
            *t = Tensor::new(rec.shape.clone(), rec.data.clone()).map_err(ModelError::from)?;
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadKind;

    fn sample_checkpoint() -> (PhmmModel, Checkpoint) {
        let cfg = ModelConfig::new(2, 2, 3, 4, HeadKind::Classifier { num_classes: 2 });
        let model = PhmmModel::new(cfg, 11).unwrap();
        let task = Task::Classification {
            class_names: vec!["a".into(), "b".into()],
        };
        let ck = Checkpoint::from_model(&model, 11, task, None, None);
        (model, ck)
    }

    #[test]
    fn round_trip_restores_parameters() {
        let (model, ck) = sample_checkpoint();
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        let restored = back.to_model().unwrap();
        assert_eq!(restored.params().flatten(), model.params().flatten());
    }

    #[test]
    fn rejects_other_versions() {
        let (_, mut ck) = sample_checkpoint();
        ck.format_version = 2;
        assert!(matches!(Checkpoint::from_json(&ck.to_json()), Err(CheckpointError::Version { found: 2 })));
        let missing = ck.to_json().replace("\"format_version\": 2,", "");
        assert!(matches!(Checkpoint::from_json(&missing), Err(CheckpointError::Format(_))));
        assert!(matches!(Checkpoint::from_json("{not json"), Err(CheckpointError::Format(_))));
    }

    #[test]
    fn rejects_shape_and_name_mismatches() {
        let (_, ck) = sample_checkpoint();
        let mut bad = ck.clone();
        bad.params[0].shape = vec![1, 1];
        assert!(matches!(bad.to_model(), Err(CheckpointError::Mismatch(_))));
        let mut bad = ck.clone();
        bad.params[1].name = "other".into();
        assert!(matches!(bad.to_model(), Err(CheckpointError::Mismatch(_))));
        let mut bad = ck.clone();
        bad.params.pop();
        assert!(matches!(bad.to_model(), Err(CheckpointError::Mismatch(_))));
        let mut bad = ck;
        bad.config.hidden_dims = vec![5, 5];
        assert!(matches!(bad.to_model(), Err(CheckpointError::Mismatch(_))));
    }
}
