//! Transformer captioner with a hybrid output space: regular words,
//! geographic entities near the image and facts about them.

pub mod captioner;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod fidelity;
pub mod generate;
pub mod layers;
pub mod params;
pub mod tape;
pub mod train;

pub use captioner::{compute_indicators, hybrid_distribution, variant_contexts, Captioner, Example, IndicatorState, ModelVocab, Sections};
pub use checkpoint::Checkpoint;
pub use config::{ModelConfig, Variant};
pub use error::{ModelError, Result};
pub use generate::generate_all;
pub use train::{mean_loss, train, EpochLog, StopReason, TrainLog};
