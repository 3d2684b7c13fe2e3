use serde::{Deserialize, Serialize};

use crate::dataio::vocab::EOS;
use crate::error::{AclipError, Result};

/// Visual transformer geometry. Dropout and stochastic depth are not used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VisualEncoderConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    pub embed_dim: usize,
    /// Keep the randomly initialized patch projection fixed. Set from the
    /// top-level training config rather than this section.
    #[serde(skip)]
    pub frozen_patch_embed: bool,
}

impl Default for VisualEncoderConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            patch_size: 8,
            layers: 2,
            heads: 2,
            width: 64,
            embed_dim: 32,
            frozen_patch_embed: true,
        }
    }
}

impl VisualEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(AclipError::Config(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(AclipError::Config(format!(
                "width {} not divisible by heads {}",
                self.width, self.heads
            )));
        }
        if self.layers == 0 || self.embed_dim == 0 {
            return Err(AclipError::Config("layers and embed_dim must be positive".into()));
        }
        Ok(())
    }

    /// Patches per side.
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextEncoderConfig {
    /// Zero means "size of the corpus vocabulary".
    pub vocab_size: usize,
    pub context_length: usize,
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    pub embed_dim: usize,
    pub eos_id: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 0,
            context_length: 16,
            layers: 2,
            heads: 2,
            width: 64,
            embed_dim: 32,
            eos_id: EOS,
        }
    }
}

impl TextEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.context_length < 2 {
            return Err(AclipError::Config("context_length must be >= 2".into()));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(AclipError::Config(format!(
                "text width {} not divisible by heads {}",
                self.width, self.heads
            )));
        }
        if self.vocab_size <= self.eos_id {
            return Err(AclipError::Config(format!(
                "vocab_size {} does not contain eos id {}",
                self.vocab_size, self.eos_id
            )));
        }
        if self.layers == 0 || self.embed_dim == 0 {
            return Err(AclipError::Config("layers and embed_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }
}
