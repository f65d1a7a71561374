//! JSON checkpoints: config, vocabularies, fact ranker and weights.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use geoknow_core::artifact::ArtifactMeta;
use geoknow_core::knowledge::FactRanker;

use crate::captioner::{Captioner, ModelVocab};
use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::params::NamedTensor;
use crate::train::TrainLog;

pub const FORMAT: &str = "geoknow-captioner/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub meta: ArtifactMeta,
    pub config: ModelConfig,
    pub vocab: ModelVocab,
    /// Ranker used to build the knowledge contexts the model was trained on.
    pub ranker: Option<FactRanker>,
    pub tensors: Vec<NamedTensor>,
    pub log: Option<TrainLog>,
}

impl Checkpoint {
    pub fn new(model: &Captioner<f32>, meta: ArtifactMeta, ranker: Option<FactRanker>, log: Option<TrainLog>) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            meta,
            config: model.config.clone(),
            vocab: model.vocab.clone(),
            ranker,
            tensors: model.params.to_tensors(),
            log,
        }
    }

    /// Rebuilds the model; tensor names and shapes must match the
    /// architecture implied by the stored config.
    pub fn model(&self) -> Result<Captioner<f32>> {
        let mut model = Captioner::new(self.config.clone(), self.vocab.clone())?;
        model.params.load_tensors(&self.tensors)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        fs::write(path, text).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.format != FORMAT {
            return Err(ModelError::Checkpoint(format!("unsupported format `{}`", ck.format)));
        }
        Ok(ck)
    }

    /// Fails when `expected` differs from the stored config in any field
    /// other than the variant, naming the fields.
    pub fn check_config(&self, expected: &ModelConfig) -> Result<()> {
        let a = serde_json::to_value(&self.config).expect("config serializes");
        let b = serde_json::to_value(expected).expect("config serializes");
        let (Some(a), Some(b)) = (a.as_object(), b.as_object()) else {
            unreachable!("configs serialize to objects")
        };
        let diff: Vec<String> = a
            .iter()
            .filter(|(k, v)| k.as_str() != "variant" && b.get(*k) != Some(*v))
            .map(|(k, v)| format!("{k} (checkpoint {v}, config {})", b.get(k).unwrap_or(&serde_json::Value::Null)))
            .collect();
        if diff.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Checkpoint(format!("config mismatch: {}", diff.join(", "))))
        }
    }
}
