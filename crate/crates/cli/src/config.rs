//! Run configuration: a TOML file with a `[paths]` and a `[model]` table.
//!
//! ```toml
//! seed = 3
//! preset = "tiny"        # or "reference"
//!
//! [paths]
//! features = "data/features"
//!
//! [model]
//! d = 64
//! variant = "no_g_ind"
//! ```
//!
//! Keys missing from `[model]` come from the preset.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use geoknow_core::artifact::content_hash;
use geoknow_model::ModelConfig;

use crate::UsageError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub entities: Option<PathBuf>,
    pub triples: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    /// Directory of image feature files; missing files fall back to
    /// synthetic features.
    pub features: Option<PathBuf>,
    /// Pretrained word vectors (GloVe text format).
    pub vectors: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Reference,
    Tiny,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    #[serde(default)]
    preset: Preset,
    #[serde(default)]
    paths: Paths,
    #[serde(default)]
    model: toml::Table,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub paths: Paths,
    pub model: ModelConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        RunConfig {
            paths: Paths::default(),
            model: match preset {
                Preset::Reference => ModelConfig::default(),
                Preset::Tiny => ModelConfig::tiny(),
            },
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| UsageError(format!("config: {e}")))?;
        let base = Self::preset(raw.preset).model;
        // overlay the [model] table on the preset
        let mut merged = toml::Table::try_from(&base).context("serializing preset")?;
        for (k, v) in raw.model {
            merged.insert(k, v);
        }
        let mut model: ModelConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| UsageError(format!("config [model]: {e}")))?;
        if let Some(seed) = raw.seed {
            model.seed = seed;
        }
        model.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(RunConfig { paths: raw.paths, model })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Hash of the model settings; paths are excluded so that moving a run
    /// does not change it.
    pub fn model_hash(&self) -> String {
        content_hash([serde_json::to_string(&self.model).expect("config serializes")])
    }
}
