use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// Which parts of the knowledge-aware decoder are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Vocabulary scores are not gated by the predicate indicator.
    NoPInd,
    /// Fact scores are not masked by the geo-entity indicator.
    NoGInd,
    /// Neither geographic nor knowledge context.
    NoKnowledge,
    /// Geographic context only.
    GeoOnly,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoPInd,
        Variant::NoGInd,
        Variant::NoKnowledge,
        Variant::GeoOnly,
    ];

    pub fn uses_geo(self) -> bool {
        self != Variant::NoKnowledge
    }

    pub fn uses_knowledge(self) -> bool {
        !matches!(self, Variant::NoKnowledge | Variant::GeoOnly)
    }

    /// Vocabulary scores gated by the predicate indicator. Variants without a
    /// knowledge context would otherwise score every word zero.
    pub fn gates_vocabulary(self) -> bool {
        matches!(self, Variant::Full | Variant::NoGInd)
    }

    pub fn masks_facts(self) -> bool {
        self != Variant::NoGInd
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoPInd => "no_p_ind",
            Variant::NoGInd => "no_g_ind",
            Variant::NoKnowledge => "no_knowledge",
            Variant::GeoOnly => "geo_only",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub lr: f64,
    /// Examples per optimizer step; gradients are averaged over the batch.
    #[serde(default = "one")]
    pub batch_size: usize,
    /// Gradients are clipped elementwise to `[-grad_clip, grad_clip]`.
    pub grad_clip: f64,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    /// Stop as soon as the epoch training loss falls below this.
    #[serde(default)]
    pub stop_below_loss: Option<f64>,
    /// Geographic context size and radius.
    pub n: usize,
    pub r_km: f64,
    /// Knowledge context size.
    pub m: usize,
    pub max_caption_len: usize,
    /// Image feature grid: (positions, channels).
    pub image_positions: usize,
    pub image_channels: usize,
    pub min_count: usize,
    pub variant: Variant,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 300,
            enc_layers: 3,
            dec_layers: 3,
            heads: 10,
            ff_dim: 512,
            dropout: 0.5,
            lr: 4e-4,
            batch_size: 1,
            grad_clip: 5.0,
            early_stop_patience: 20,
            max_epochs: 1000,
            stop_below_loss: None,
            n: 300,
            r_km: 1.0,
            m: 50,
            max_caption_len: 100,
            image_positions: 196,
            image_channels: 2048,
            min_count: 1,
            variant: Variant::Full,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small model for the synthetic corpora: d = 64, one layer, two heads.
    pub fn tiny() -> Self {
        ModelConfig {
            d: 64,
            enc_layers: 1,
            dec_layers: 1,
            heads: 2,
            ff_dim: 128,
            dropout: 0.0,
            max_epochs: 500,
            image_positions: 4,
            image_channels: 16,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.d <= geoknow_core::geo::SCALAR_FEATURES {
            return bad(format!("d = {} leaves no room for the type embedding", self.d));
        }
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return bad(format!("d = {} not divisible by heads = {}", self.d, self.heads));
        }
        for (name, v) in [
            ("ff_dim", self.ff_dim),
            ("n", self.n),
            ("max_caption_len", self.max_caption_len),
            ("image_positions", self.image_positions),
            ("image_channels", self.image_channels),
            ("max_epochs", self.max_epochs),
            ("min_count", self.min_count),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.lr > 0.0 && self.grad_clip > 0.0 && self.r_km > 0.0) {
            return bad("lr, grad_clip and r_km must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_setup() {
        let c = ModelConfig::default();
        assert_eq!((c.d, c.enc_layers, c.heads, c.ff_dim), (300, 3, 10, 512));
        assert_eq!((c.n, c.r_km, c.m, c.max_caption_len), (300, 1.0, 50, 100));
        c.validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
        let bad = ModelConfig { heads: 7, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("nope".parse::<Variant>().is_err());
    }
}
