//! Training configuration and its JSON form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attnmask::{EmaResolution, LayerReduce, MaskConfig, SelectionStrategy};
use crate::encoders::{TextEncoderConfig, VisualEncoderConfig};
use crate::error::{AclipError, Result};
use crate::losses::{SslKind, TemperatureParam};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyName {
    #[default]
    Low,
    High,
    Mixed,
    Random,
}

/// Every knob of a training run. Field names are the JSON keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Online views per image.
    pub views: usize,
    /// Per-view keep ratio; absent means `1 / views`.
    pub keep_ratio: Option<f64>,
    pub strategy: StrategyName,
    pub mixed_random_fraction: f64,
    /// Mask granularity in pixels.
    pub mask_granularity: usize,
    pub score_layers: LayerReduce,
    pub ema_resolution: EmaResolution,
    pub ema_momentum: f64,
    pub ssl: SslKind,
    pub byol: bool,
    pub ssl_weight: f64,
    pub ssl_temperature: f64,
    pub temperature: TemperatureParam,
    pub frozen_patch_embed: bool,
    pub crop_scale_min: f64,
    pub crop_scale_max: f64,
    /// Only `float64` is supported.
    pub dtype: String,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub visual: VisualEncoderConfig,
    pub text: TextEncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 64,
            total_steps: 2000,
            lr: 3e-3,
            warmup_steps: 100,
            weight_decay: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-8,
            views: 2,
            keep_ratio: None,
            strategy: StrategyName::Low,
            mixed_random_fraction: 0.25,
            mask_granularity: 8,
            score_layers: LayerReduce::All,
            ema_resolution: EmaResolution::Full,
            ema_momentum: 0.996,
            ssl: SslKind::None,
            byol: false,
            ssl_weight: 1.0,
            ssl_temperature: 0.1,
            temperature: TemperatureParam::default(),
            frozen_patch_embed: true,
            crop_scale_min: 0.5,
            crop_scale_max: 1.0,
            dtype: "float64".into(),
            checkpoint_every: 0,
            visual: VisualEncoderConfig::default(),
            text: TextEncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Desk-scale defaults.
    pub fn desk() -> Self {
        Self::default()
    }

    /// Full-size reference values (ViT-B/16 at 224 px, 12-layer text
    /// transformer, batch 4096, 25 epochs of ~15M pairs). Far beyond desk
    /// hardware; kept for comparison.
    pub fn full_scale() -> Self {
        Self {
            batch_size: 4096,
            total_steps: 91_553,
            lr: 5e-4,
            warmup_steps: 3_662,
            weight_decay: 0.5,
            mask_granularity: 32,
            ssl: SslKind::Simclr,
            byol: true,
            visual: VisualEncoderConfig {
                image_size: 224,
                patch_size: 16,
                layers: 12,
                heads: 12,
                width: 768,
                embed_dim: 512,
                frozen_patch_embed: true,
            },
            text: TextEncoderConfig {
                vocab_size: 49_408,
                context_length: 77,
                layers: 12,
                heads: 8,
                width: 512,
                embed_dim: 512,
                ..TextEncoderConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full_scale()),
            other => Err(AclipError::Config(format!("unknown profile {other:?}"))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| AclipError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AclipError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Visual config with the top-level patch-embedding flag applied.
    pub fn visual_config(&self) -> VisualEncoderConfig {
        VisualEncoderConfig {
            frozen_patch_embed: self.frozen_patch_embed,
            ..self.visual.clone()
        }
    }

    /// Text config with `vocab_size` filled in when left at zero.
    pub fn text_config(&self, vocab_size: usize) -> TextEncoderConfig {
        let mut t = self.text.clone();
        if t.vocab_size == 0 {
            t.vocab_size = vocab_size;
        }
        t
    }

    pub fn selection(&self) -> SelectionStrategy {
        match self.strategy {
            StrategyName::Low => SelectionStrategy::Low,
            StrategyName::High => SelectionStrategy::High,
            StrategyName::Mixed => SelectionStrategy::Mixed {
                random_fraction: self.mixed_random_fraction,
            },
            StrategyName::Random => SelectionStrategy::Random,
        }
    }

    pub fn mask_config(&self) -> MaskConfig {
        MaskConfig {
            views: self.views,
            keep_ratio: self.keep_ratio,
            strategy: self.selection(),
            granularity: self.mask_granularity,
            layers: self.score_layers,
            ema_resolution: self.ema_resolution,
        }
    }

    /// The EMA encoder is needed for scoring or as the BYOL target.
    pub fn needs_ema_pass(&self) -> bool {
        self.byol || self.mask_config().needs_scores()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(AclipError::Config(msg));
        if self.dtype != "float64" {
            return bad(format!("dtype {:?} unsupported; only float64 is implemented", self.dtype));
        }
        if self.batch_size == 0 || self.total_steps == 0 {
            return bad("batch_size and total_steps must be positive".into());
        }
        if self.warmup_steps > self.total_steps {
            return bad("warmup_steps exceeds total_steps".into());
        }
        if !(self.lr > 0.0 && self.weight_decay >= 0.0 && self.adam_eps > 0.0) {
            return bad("lr must be positive, weight_decay and adam_eps non-negative".into());
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} = {b} outside [0, 1)"));
            }
        }
        if !(0.0..=1.0).contains(&self.ema_momentum) {
            return bad(format!("ema_momentum {} outside [0, 1]", self.ema_momentum));
        }
        if !(0.0 < self.crop_scale_min && self.crop_scale_min <= self.crop_scale_max && self.crop_scale_max <= 1.0) {
            return bad("crop scales must satisfy 0 < min <= max <= 1".into());
        }
        if self.ssl != SslKind::None && self.views < 2 {
            return bad("online-to-online ssl needs views >= 2".into());
        }
        if self.ssl_weight < 0.0 || self.ssl_temperature <= 0.0 {
            return bad("ssl_weight must be >= 0 and ssl_temperature > 0".into());
        }
        self.temperature.validate()?;
        let v = self.visual_config();
        v.validate()?;
        self.mask_config().validate(&v)?;
        if self.text.context_length < 2 {
            return bad("text context_length must be >= 2".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let cfg = TrainConfig::desk();
        assert_eq!(TrainConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert!(TrainConfig::from_json(r#"{"batch_sise": 3}"#).is_err());
        let partial = TrainConfig::from_json(r#"{"views": 1, "keep_ratio": 1.0}"#).unwrap();
        assert_eq!(partial.views, 1);
        assert_eq!(partial.batch_size, 64);
    }

    #[test]
    fn validation_catches_bad_values() {
        assert!(TrainConfig::desk().validate().is_ok());
        let c = TrainConfig {
            dtype: "float32".into(),
            ..TrainConfig::desk()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            views: 1,
            ssl: SslKind::Simclr,
            ..TrainConfig::desk()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            mask_granularity: 12,
            ..TrainConfig::desk()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn full_profile_records_reference_values() {
        let p = TrainConfig::profile("full").unwrap();
        assert_eq!((p.batch_size, p.lr, p.weight_decay), (4096, 5e-4, 0.5));
        assert_eq!(p.visual.num_patches(), 196);
        assert!(TrainConfig::profile("huge").is_err());
    }
}
