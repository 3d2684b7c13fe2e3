//! Visual and text transformers and their projection into the shared space.

pub mod block;
pub mod checkpoint;
pub mod config;
pub mod posembed;
pub mod text;
pub mod vit;

use ndgrad::{Graph, Var};

pub use checkpoint::{Checkpoint, DType};
pub use config::{TextEncoderConfig, VisualEncoderConfig};
pub use posembed::interpolate_pos_embed;
pub use text::{eos_position, init_text, text_forward};
pub use vit::{init_visual, patch_batch, patchify, unpatchify, vit_forward, AttentionRecord, VitOutput};

use crate::error::{AclipError, Result};

/// `normalize(feature @ proj)` row by row.
pub fn project_and_normalize(g: &mut Graph, feature: Var, proj: Var) -> Result<Var> {
    let z = g.matmul(feature, proj)?;
    g.normalize_rows(z).map_err(|e| match e {
        ndgrad::Error::Degenerate { detail, .. } => AclipError::DegenerateEmbedding(detail),
        other => other.into(),
    })
}
