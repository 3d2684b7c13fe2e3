//! How much of an annotated object a mask keeps.

use serde::{Deserialize, Serialize};

use crate::attnmask::{build_view_plan, score_images, EmaResolution, LayerReduce, MaskConfig, SelectionStrategy, ViewPlan};
use crate::dataio::Image;
use crate::encoders::VisualEncoderConfig;
use crate::error::{AclipError, Result};
use crate::geometry::CropRect;
use crate::params::ParamSet;

/// Coverage of one view. `empty` marks views with no patch inside the box;
/// their `fraction` is 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub fraction: f64,
    pub inside: usize,
    pub kept_inside: usize,
    pub empty: bool,
}

/// Fraction of the patches whose centers fall in `bbox` (image coordinates)
/// that each view keeps. Patch centers are mapped through the view's crop.
pub fn mask_coverage(plan: &ViewPlan, bbox: &CropRect, grid: (usize, usize)) -> Vec<Coverage> {
    let (rows, cols) = grid;
    plan.rects
        .iter()
        .zip(&plan.kept)
        .map(|(rect, kept)| {
            let inside: Vec<usize> = (0..rows * cols)
                .filter(|&i| {
                    let u = ((i % cols) as f64 + 0.5) / cols as f64;
                    let v = ((i / cols) as f64 + 0.5) / rows as f64;
                    let (x, y) = rect.to_image(u, v);
                    bbox.contains_point(x, y)
                })
                .collect();
            let kept_inside = inside.iter().filter(|i| kept.binary_search(i).is_ok()).count();
            Coverage {
                fraction: if inside.is_empty() {
                    0.0
                } else {
                    kept_inside as f64 / inside.len() as f64
                },
                inside: inside.len(),
                kept_inside,
                empty: inside.is_empty(),
            }
        })
        .collect()
}

/// Summary over a set of images; flagged (empty) cases are excluded from
/// the mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub evaluated: usize,
    pub flagged_empty: usize,
}

impl CoverageStats {
    pub fn from_coverages(items: &[Coverage]) -> Self {
        let valid: Vec<f64> = items.iter().filter(|c| !c.empty).map(|c| c.fraction).collect();
        let n = valid.len();
        Self {
            mean: if n == 0 { 0.0 } else { valid.iter().sum::<f64>() / n as f64 },
            min: valid.iter().copied().fold(f64::INFINITY, f64::min).min(1.0),
            max: valid.iter().copied().fold(0.0, f64::max),
            evaluated: n,
            flagged_empty: items.len() - n,
        }
    }
}

/// Scores every whole image with `visual` params, keeps `keep` of its
/// tokens with `strategy` and measures object coverage.
#[allow(clippy::too_many_arguments)]
pub fn coverage_study(
    visual: &ParamSet,
    vcfg: &VisualEncoderConfig,
    images: &[Image],
    bboxes: &[CropRect],
    keep: f64,
    strategy: SelectionStrategy,
    granularity: usize,
    layers: LayerReduce,
    seed: u64,
) -> Result<CoverageStats> {
    if images.len() != bboxes.len() {
        return Err(AclipError::Dimension(format!(
            "{} images but {} boxes",
            images.len(),
            bboxes.len()
        )));
    }
    let cfg = MaskConfig {
        views: 1,
        keep_ratio: Some(keep),
        strategy,
        granularity,
        layers,
        ema_resolution: EmaResolution::Full,
    };
    cfg.validate(vcfg)?;
    let mut all = Vec::with_capacity(images.len());
    for (start, chunk) in images.chunks(64).enumerate().map(|(c, ch)| (c * 64, ch)) {
        let maps = if cfg.needs_scores() {
            let refs: Vec<&Image> = chunk.iter().collect();
            Some(score_images(visual, vcfg, &refs, &vec![CropRect::FULL; chunk.len()], EmaResolution::Full, layers)?.maps)
        } else {
            None
        };
        for i in 0..chunk.len() {
            let map = maps.as_ref().map(|m| &m[i]);
            let plan = build_view_plan(map, &[CropRect::FULL], &cfg, vcfg, seed, 0, start + i)?;
            all.extend(mask_coverage(&plan, &bboxes[start + i], (vcfg.grid(), vcfg.grid())));
        }
    }
    Ok(CoverageStats::from_coverages(&all))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attnmask::random_mask;

    fn plan(rect: CropRect, kept: Vec<usize>) -> ViewPlan {
        ViewPlan {
            k: 1,
            rects: vec![rect],
            kept: vec![kept],
            granularity: 8,
            ema_rect: rect,
        }
    }

    #[test]
    fn keeping_everything_covers_everything() {
        let bbox = CropRect::new(0.1, 0.1, 0.6, 0.5).unwrap();
        let c = mask_coverage(&plan(CropRect::FULL, (0..16).collect()), &bbox, (4, 4));
        assert_eq!(c[0].fraction, 1.0);
        assert!(!c[0].empty);
    }

    #[test]
    fn box_outside_crop_is_flagged() {
        let bbox = CropRect::new(0.8, 0.8, 1.0, 1.0).unwrap();
        let view = CropRect::new(0.0, 0.0, 0.5, 0.5).unwrap();
        let c = mask_coverage(&plan(view, (0..16).collect()), &bbox, (4, 4));
        assert!(c[0].empty);
        assert_eq!(c[0].fraction, 0.0);
    }

    #[test]
    fn random_half_mask_covers_half_on_average() {
        let bbox = CropRect::new(0.0, 0.0, 0.5, 0.5).unwrap();
        let trials = 400;
        let mean: f64 = (0..trials)
            .map(|s| {
                let kept = random_mask(16, 0.5, s).unwrap();
                mask_coverage(&plan(CropRect::FULL, kept), &bbox, (4, 4))[0].fraction
            })
            .sum::<f64>()
            / trials as f64;
        assert!((mean - 0.5).abs() < 0.05, "{mean}");
    }
}
