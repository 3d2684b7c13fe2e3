//! Per-image view plans: one EMA pass over the enclosing crop, then a keep
//! list for every online view.

use ndgrad::{Graph, Tensor};
use serde::{Deserialize, Serialize};

use crate::attnmask::select::{budget, select_from_scores, SelectionStrategy};
use crate::attnmask::{attn_scores, block_factor, expand_blocks, group_scores, resample_scores, LayerReduce, ScoreMap};
use crate::dataio::Image;
use crate::encoders::{interpolate_pos_embed, patch_batch, vit_forward, VisualEncoderConfig};
use crate::error::{AclipError, Result};
use crate::geometry::CropRect;
use crate::params::ParamSet;
use crate::rng::{stream, Domain};

/// Input resolution of the EMA scoring pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmaResolution {
    #[default]
    Full,
    Half,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskConfig {
    pub views: usize,
    /// Per-view keep ratio; `None` means `1 / views`.
    pub keep_ratio: Option<f64>,
    pub strategy: SelectionStrategy,
    /// Mask granularity in pixels; a multiple of the patch size.
    pub granularity: usize,
    pub layers: LayerReduce,
    pub ema_resolution: EmaResolution,
}

impl MaskConfig {
    pub fn per_view_keep(&self) -> f64 {
        self.keep_ratio.unwrap_or(1.0 / self.views as f64)
    }

    pub fn validate(&self, vcfg: &VisualEncoderConfig) -> Result<()> {
        if self.views == 0 {
            return Err(AclipError::Config("views must be >= 1".into()));
        }
        let keep = self.per_view_keep();
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(AclipError::Config(format!("keep ratio {keep} outside (0, 1]")));
        }
        let f = block_factor(self.granularity, vcfg.patch_size).map_err(|e| AclipError::Config(e.to_string()))?;
        if vcfg.image_size % self.granularity != 0 {
            return Err(AclipError::Config(format!(
                "mask granularity {} does not divide image size {}",
                self.granularity, vcfg.image_size
            )));
        }
        let blocks = (vcfg.grid() / f).pow(2);
        if budget(blocks, keep) == 0 {
            return Err(AclipError::Config(format!(
                "keep ratio {keep} leaves no block out of {blocks}"
            )));
        }
        if let SelectionStrategy::Mixed { random_fraction } = self.strategy {
            if !(random_fraction > 0.0 && random_fraction < keep) {
                return Err(AclipError::Config(format!(
                    "mixed random fraction {random_fraction} must lie in (0, {keep})"
                )));
            }
        }
        if self.ema_resolution == EmaResolution::Half && (vcfg.grid() % 2 != 0 || vcfg.grid() < 4) {
            return Err(AclipError::Config(format!(
                "half-resolution scoring needs an even patch grid of at least 4, got {}",
                vcfg.grid()
            )));
        }
        Ok(())
    }

    /// Whether selection reads the EMA scores at all.
    pub fn needs_scores(&self) -> bool {
        self.strategy != SelectionStrategy::Random && self.per_view_keep() < 1.0
    }
}

/// Crops and keep lists for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewPlan {
    pub k: usize,
    pub rects: Vec<CropRect>,
    /// Sorted, distinct token indices per view.
    pub kept: Vec<Vec<usize>>,
    /// Mask granularity in pixels.
    pub granularity: usize,
    /// Region the EMA scores were computed on.
    pub ema_rect: CropRect,
}

/// Output of the EMA scoring pass over a batch.
pub struct EmaScores {
    pub maps: Vec<ScoreMap>,
    /// Post-norm CLS features `[B, width]`.
    pub cls: Tensor,
}

/// Runs the shadow encoder (no gradients) on `rects[b]` of `images[b]` and
/// returns one score map per image, each tagged with its rectangle.
pub fn score_images(
    shadow: &ParamSet,
    vcfg: &VisualEncoderConfig,
    images: &[&Image],
    rects: &[CropRect],
    resolution: EmaResolution,
    layers: LayerReduce,
) -> Result<EmaScores> {
    if images.len() != rects.len() {
        return Err(AclipError::Dimension(format!(
            "{} images but {} rectangles",
            images.len(),
            rects.len()
        )));
    }
    let size = match resolution {
        EmaResolution::Full => vcfg.image_size,
        EmaResolution::Half => vcfg.image_size / 2,
    };
    let crops: Vec<Image> = images
        .iter()
        .zip(rects)
        .map(|(img, r)| img.crop_resize(r, size, size))
        .collect();
    let patches = patch_batch(&crops, vcfg.patch_size)?;
    let mut g = Graph::new();
    let p = shadow.bind(&mut g, true);
    let pos = match resolution {
        EmaResolution::Full => None,
        EmaResolution::Half => {
            let table = interpolate_pos_embed(shadow.get("visual.pos")?, size / vcfg.patch_size)?;
            Some(g.constant(table))
        }
    };
    let out = vit_forward(&mut g, &p, vcfg, &patches, None, pos)?;
    let maps = (0..images.len())
        .map(|b| {
            let mut m = attn_scores(&out.attention, b, layers)?;
            m.source_rect = rects[b];
            Ok(m)
        })
        .collect::<Result<_>>()?;
    Ok(EmaScores {
        maps,
        cls: g.value(out.cls).clone(),
    })
}

/// Keep lists for each view of one image. `ema_map` must cover every view
/// rectangle. View `v` draws its random choices from a stream keyed by
/// `(seed, step, image_id, v)`. Without a map every view keeps tokens at
/// random (or all of them at keep ratio 1).
pub fn build_view_plan(
    ema_map: Option<&ScoreMap>,
    view_rects: &[CropRect],
    cfg: &MaskConfig,
    vcfg: &VisualEncoderConfig,
    seed: u64,
    step: usize,
    image_id: usize,
) -> Result<ViewPlan> {
    if view_rects.len() != cfg.views {
        return Err(AclipError::Argument(format!(
            "{} crops for {} views",
            view_rects.len(),
            cfg.views
        )));
    }
    let keep = cfg.per_view_keep();
    let grid = vcfg.grid();
    let factor = block_factor(cfg.granularity, vcfg.patch_size)?;
    let blocks_side = grid / factor;
    let mut kept = Vec::with_capacity(cfg.views);
    for (v, rect) in view_rects.iter().enumerate() {
        let mut rng = stream(seed, Domain::Mask, &[step as u64, image_id as u64, v as u64]);
        let block_scores = match (ema_map, cfg.needs_scores()) {
            (Some(map), true) => {
                let local = resample_scores(map, rect, grid, grid)?;
                group_scores(&local, cfg.granularity, vcfg.patch_size)?.scores
            }
            (None, true) => {
                return Err(AclipError::Argument("attentive selection without a score map".into()));
            }
            _ => vec![0.0; blocks_side * blocks_side],
        };
        let strategy = if cfg.needs_scores() {
            cfg.strategy
        } else if keep < 1.0 {
            SelectionStrategy::Random
        } else {
            SelectionStrategy::Low
        };
        let blocks = select_from_scores(&block_scores, keep, strategy, &mut rng)?;
        kept.push(expand_blocks(&blocks, factor, grid));
    }
    let ema_rect = ema_map.map_or(CropRect::FULL, |m| m.source_rect);
    Ok(ViewPlan {
        k: cfg.views,
        rects: view_rects.to_vec(),
        kept,
        granularity: cfg.granularity,
        ema_rect,
    })
}
