#![allow(dead_code)]

pub mod oracle;

use std::sync::Arc;

use aclip::dataio::{gen_synthetic, Corpus, SynthSpec};
use aclip::encoders::{TextEncoderConfig, VisualEncoderConfig};
use aclip::trainer::TrainConfig;

pub fn corpus(n: usize, seed: u64) -> Arc<Corpus> {
    let spec = SynthSpec {
        image_size: 32,
        ..SynthSpec::default()
    };
    Arc::new(gen_synthetic(n, &spec, seed).unwrap())
}

/// A model small enough for many steps inside a unit test.
pub fn tiny_config() -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        total_steps: 20,
        warmup_steps: 2,
        views: 2,
        visual: VisualEncoderConfig {
            image_size: 16,
            patch_size: 4,
            layers: 1,
            heads: 2,
            width: 16,
            embed_dim: 8,
            frozen_patch_embed: true,
        },
        text: TextEncoderConfig {
            context_length: 16,
            layers: 1,
            heads: 2,
            width: 16,
            embed_dim: 8,
            ..TextEncoderConfig::default()
        },
        mask_granularity: 4,
        ..TrainConfig::desk()
    }
}
