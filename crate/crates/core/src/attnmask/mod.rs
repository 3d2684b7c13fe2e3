//! Attentive token selection: score maps from CLS attention, the EMA score
//! network, crop-aware resampling, and per-view keep lists.

pub mod ema;
pub mod plan;
pub mod select;
pub mod visualize;

use serde::{Deserialize, Serialize};

use crate::encoders::AttentionRecord;
use crate::error::{AclipError, Result};
use crate::geometry::CropRect;

pub use ema::{ema_momentum, EmaState};
pub use plan::{build_view_plan, score_images, EmaResolution, MaskConfig, ViewPlan};
pub use select::{random_mask, select_from_scores, select_tokens, SelectionStrategy};
pub use visualize::{heatmap, masked_composite, side_by_side, triptych};

/// Which transformer layers contribute to a score map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerReduce {
    #[default]
    All,
    Last,
}

/// Per-patch attentive scores over a row-major grid, with the image region
/// the grid covers.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    pub rows: usize,
    pub cols: usize,
    pub scores: Vec<f64>,
    pub source_rect: CropRect,
    /// Mean CLS self-attention over the averaged layers and heads.
    pub cls_mass: f64,
}

impl ScoreMap {
    pub fn new(rows: usize, cols: usize, scores: Vec<f64>, source_rect: CropRect) -> Result<Self> {
        if rows == 0 || cols == 0 || scores.len() != rows * cols {
            return Err(AclipError::Dimension(format!(
                "{} scores for a {rows}x{cols} grid",
                scores.len()
            )));
        }
        source_rect.validate()?;
        Ok(Self {
            rows,
            cols,
            scores,
            source_rect,
            cls_mass: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.scores[r * self.cols + c]
    }

    pub fn total(&self) -> f64 {
        self.scores.iter().sum()
    }
}

/// Score map of image `b`: CLS-row attention averaged over the selected
/// layers and all heads, CLS key excluded. The record must cover every patch.
pub fn attn_scores(record: &AttentionRecord, b: usize, reduce: LayerReduce) -> Result<ScoreMap> {
    if record.layers.is_empty() {
        return Err(AclipError::Structural("attention record has no layers".into()));
    }
    if b >= record.batch() {
        return Err(AclipError::Index(format!("image {b} outside batch of {}", record.batch())));
    }
    let (rows, cols) = record.grid;
    let n = rows * cols;
    let kept = &record.kept[b];
    if kept.len() != n {
        return Err(AclipError::Structural(format!(
            "scores need attention over all {n} patches, record keeps {}",
            kept.len()
        )));
    }
    let layers: Vec<usize> = match reduce {
        LayerReduce::All => (0..record.layers.len()).collect(),
        LayerReduce::Last => vec![record.layers.len() - 1],
    };
    let heads = record.heads();
    let mut scores = vec![0.0; n];
    let mut cls_mass = 0.0;
    for &l in &layers {
        if record.layers[l].shape() != [record.batch(), heads, n + 1] {
            return Err(AclipError::Structural(format!(
                "layer {l} attention has shape {:?}",
                record.layers[l].shape()
            )));
        }
        for h in 0..heads {
            cls_mass += record.weight(l, b, h, 0);
            for (j, &p) in kept.iter().enumerate() {
                scores[p] += record.weight(l, b, h, j + 1);
            }
        }
    }
    let denom = (layers.len() * heads) as f64;
    for s in &mut scores {
        *s /= denom;
    }
    Ok(ScoreMap {
        rows,
        cols,
        scores,
        source_rect: CropRect::FULL,
        cls_mass: cls_mass / denom,
    })
}

/// Smallest rectangle containing every view.
pub fn enclosing_rect(views: &[CropRect]) -> Result<CropRect> {
    let first = views
        .first()
        .ok_or_else(|| AclipError::Argument("enclosing_rect of no views".into()))?;
    Ok(views[1..].iter().fold(*first, |acc, r| CropRect {
        x0: acc.x0.min(r.x0),
        y0: acc.y0.min(r.y0),
        x1: acc.x1.max(r.x1),
        y1: acc.y1.max(r.y1),
    }))
}

/// `a + t (b - a)`, kept inside `[min(a,b), max(a,b)]`.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if a == b {
        return a;
    }
    (a + t * (b - a)).clamp(a.min(b), a.max(b))
}

/// Samples `map` at the cell centers of a `rows x cols` grid laid over
/// `target`, bilinearly, in the source grid's continuous frame with borders
/// clamped.
pub fn resample_scores(map: &ScoreMap, target: &CropRect, rows: usize, cols: usize) -> Result<ScoreMap> {
    target.validate()?;
    if !target.within(&map.source_rect, 1e-12) {
        return Err(AclipError::Geometry(format!(
            "target {target:?} not inside source {:?}",
            map.source_rect
        )));
    }
    if rows == 0 || cols == 0 {
        return Err(AclipError::Dimension("empty target grid".into()));
    }
    let src = &map.source_rect;
    let coord = |i: usize, n: usize, t0: f64, t_len: f64, s0: f64, s_len: f64, s_n: usize| {
        let img = t0 + (i as f64 + 0.5) / n as f64 * t_len;
        let f = (img - s0) / s_len * s_n as f64 - 0.5;
        f.clamp(0.0, (s_n - 1) as f64)
    };
    let mut scores = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let fy = coord(i, rows, target.y0, target.height(), src.y0, src.height(), map.rows);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(map.rows - 1);
        let ty = fy - y0 as f64;
        for j in 0..cols {
            let fx = coord(j, cols, target.x0, target.width(), src.x0, src.width(), map.cols);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(map.cols - 1);
            let tx = fx - x0 as f64;
            let top = lerp(map.at(y0, x0), map.at(y0, x1), tx);
            let bottom = lerp(map.at(y1, x0), map.at(y1, x1), tx);
            scores.push(lerp(top, bottom, ty));
        }
    }
    Ok(ScoreMap {
        rows,
        cols,
        scores,
        source_rect: *target,
        cls_mass: map.cls_mass,
    })
}

/// Averages `(g/P) x (g/P)` blocks of patch scores into block scores.
pub fn group_scores(map: &ScoreMap, g: usize, patch: usize) -> Result<ScoreMap> {
    let f = block_factor(g, patch)?;
    if map.rows % f != 0 || map.cols % f != 0 {
        return Err(AclipError::Dimension(format!(
            "{}x{} grid not divisible into {f}x{f} blocks",
            map.rows, map.cols
        )));
    }
    if f == 1 {
        return Ok(map.clone());
    }
    let (br, bc) = (map.rows / f, map.cols / f);
    let mut scores = vec![0.0; br * bc];
    for r in 0..map.rows {
        for c in 0..map.cols {
            scores[(r / f) * bc + c / f] += map.at(r, c);
        }
    }
    let area = (f * f) as f64;
    for s in &mut scores {
        *s /= area;
    }
    Ok(ScoreMap {
        rows: br,
        cols: bc,
        scores,
        source_rect: map.source_rect,
        cls_mass: map.cls_mass,
    })
}

pub(crate) fn block_factor(g: usize, patch: usize) -> Result<usize> {
    if patch == 0 || g == 0 || g % patch != 0 {
        return Err(AclipError::Dimension(format!(
            "mask granularity {g} is not a multiple of patch size {patch}"
        )));
    }
    Ok(g / patch)
}

/// Token indices (sorted) of the patches inside the given blocks of a
/// `grid_cols`-wide patch grid.
pub fn expand_blocks(blocks: &[usize], factor: usize, grid_cols: usize) -> Vec<usize> {
    let block_cols = grid_cols / factor;
    let mut out = Vec::with_capacity(blocks.len() * factor * factor);
    for &b in blocks {
        let (br, bc) = (b / block_cols, b % block_cols);
        for dy in 0..factor {
            for dx in 0..factor {
                out.push((br * factor + dy) * grid_cols + bc * factor + dx);
            }
        }
    }
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndgrad::Tensor;

    fn record(rows: &[Vec<f64>], heads: usize, grid: (usize, usize)) -> AttentionRecord {
        let keys = rows[0].len();
        let layers = rows
            .chunks(heads)
            .map(|hs| Tensor::new(&[1, heads, keys], hs.concat()).unwrap())
            .collect();
        AttentionRecord {
            layers,
            kept: vec![(0..keys - 1).collect()],
            grid,
        }
    }

    fn softmax(logits: &[f64]) -> Vec<f64> {
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        logits.iter().map(|v| v.exp() / z).collect()
    }

    #[test]
    fn uniform_logits_give_a_fifth_each() {
        let rec = record(&[softmax(&[0.0; 5])], 1, (2, 2));
        let m = attn_scores(&rec, 0, LayerReduce::All).unwrap();
        for s in &m.scores {
            assert!((s - 0.2).abs() < 1e-15);
        }
        assert!((m.total() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn closed_form_single_peak() {
        let rec = record(&[softmax(&[0.0, 0.0, 3f64.ln(), 0.0])], 1, (1, 3));
        let m = attn_scores(&rec, 0, LayerReduce::All).unwrap();
        let want = [1.0 / 6.0, 0.5, 1.0 / 6.0];
        for (s, w) in m.scores.iter().zip(want) {
            assert!((s - w).abs() < 1e-12);
        }
        assert!((m.cls_mass - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn layers_average_and_last_selects() {
        let a = vec![0.2, 0.1, 0.3, 0.4];
        let b = vec![0.4, 0.3, 0.2, 0.1];
        let rec = record(&[a, b.clone()], 1, (1, 3));
        let all = attn_scores(&rec, 0, LayerReduce::All).unwrap();
        let want = [0.2, 0.25, 0.25];
        for (s, w) in all.scores.iter().zip(want) {
            assert!((s - w).abs() < 1e-15);
        }
        let last = attn_scores(&rec, 0, LayerReduce::Last).unwrap();
        assert_eq!(last.scores, b[1..].to_vec());
    }

    #[test]
    fn empty_record_is_structural_error() {
        let rec = AttentionRecord {
            layers: vec![],
            kept: vec![vec![0]],
            grid: (1, 1),
        };
        assert!(matches!(attn_scores(&rec, 0, LayerReduce::All), Err(AclipError::Structural(_))));
    }

    #[test]
    fn enclosing_examples() {
        let a = CropRect::new(0.1, 0.1, 0.5, 0.5).unwrap();
        let b = CropRect::new(0.3, 0.2, 0.8, 0.9).unwrap();
        assert_eq!(enclosing_rect(&[a, b]).unwrap(), CropRect::new(0.1, 0.1, 0.8, 0.9).unwrap());
        assert_eq!(enclosing_rect(&[a]).unwrap(), a);
        let left = CropRect::new(0.0, 0.0, 0.6, 1.0).unwrap();
        let right = CropRect::new(0.4, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(enclosing_rect(&[left, right]).unwrap(), CropRect::FULL);
        assert!(enclosing_rect(&[]).is_err());
    }

    #[test]
    fn resample_two_by_two_ramp() {
        let m = ScoreMap::new(2, 2, vec![0.0, 1.0, 0.0, 1.0], CropRect::FULL).unwrap();
        let same = resample_scores(&m, &CropRect::FULL, 2, 2).unwrap();
        assert_eq!(same.scores, m.scores);
        // Right half: cell centers land at source x = 0.75 and 1.25 (clamped to 1).
        let right = CropRect::new(0.5, 0.0, 1.0, 1.0).unwrap();
        let r = resample_scores(&m, &right, 2, 2).unwrap();
        assert_eq!(r.scores, vec![0.75, 1.0, 0.75, 1.0]);
        assert_eq!(r.source_rect, right);
    }

    #[test]
    fn resample_rejects_outside_target() {
        let half = CropRect::new(0.0, 0.0, 0.5, 0.5).unwrap();
        let m = ScoreMap::new(2, 2, vec![0.25; 4], half).unwrap();
        assert!(matches!(
            resample_scores(&m, &CropRect::FULL, 2, 2),
            Err(AclipError::Geometry(_))
        ));
    }

    #[test]
    fn grouping_examples() {
        let m = ScoreMap::new(2, 2, vec![0.1, 0.3, 0.2, 0.4], CropRect::FULL).unwrap();
        assert_eq!(group_scores(&m, 8, 8).unwrap(), m);
        let g = group_scores(&m, 16, 8).unwrap();
        assert_eq!((g.rows, g.cols), (1, 1));
        assert!((g.scores[0] - 0.25).abs() < 1e-15);
        let u = ScoreMap::new(4, 4, vec![0.0625; 16], CropRect::FULL).unwrap();
        let gu = group_scores(&u, 16, 8).unwrap();
        assert_eq!(gu.scores, vec![0.0625; 4]);
        assert!(group_scores(&m, 12, 8).is_err());
        let odd = ScoreMap::new(3, 3, vec![0.1; 9], CropRect::FULL).unwrap();
        assert!(group_scores(&odd, 16, 8).is_err());
    }

    #[test]
    fn block_expansion() {
        assert_eq!(expand_blocks(&[3, 0], 2, 4), vec![0, 1, 4, 5, 10, 11, 14, 15]);
    }
}
