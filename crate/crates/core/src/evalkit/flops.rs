//! Analytic transformer FLOP ledger.
//!
//! Per layer with `n` tokens of width `w`: attention costs `4 n w^2` for the
//! four projections plus `2 n^2 w` for scores and mixing; the MLP costs
//! `8 n w^2`. Token counts exclude CLS. Trained branches are charged
//! `train_factor` forwards (forward plus backward); the EMA branch runs
//! forward only.

use serde::{Deserialize, Serialize};

use crate::attnmask::select::budget;
use crate::attnmask::{block_factor, EmaResolution};
use crate::error::Result;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopSpec {
    pub visual_layers: usize,
    pub visual_width: usize,
    /// Patch tokens of a full image.
    pub patches: usize,
    /// Mask blocks are `block_factor x block_factor` patches.
    pub block_factor: usize,
    pub text_layers: usize,
    pub text_width: usize,
    pub text_tokens: usize,
    pub views: usize,
    pub keep: f64,
    /// `None` when no EMA pass runs.
    pub ema: Option<EmaResolution>,
    pub train_factor: f64,
}

impl FlopSpec {
    pub fn from_config(cfg: &TrainConfig) -> Result<Self> {
        let v = cfg.visual_config();
        Ok(Self {
            visual_layers: v.layers,
            visual_width: v.width,
            patches: v.num_patches(),
            block_factor: block_factor(cfg.mask_granularity, v.patch_size)?,
            text_layers: cfg.text.layers,
            text_width: cfg.text.width,
            text_tokens: cfg.text.context_length,
            views: cfg.views,
            keep: cfg.mask_config().per_view_keep(),
            ema: cfg.needs_ema_pass().then_some(cfg.ema_resolution),
            train_factor: 3.0,
        })
    }

    /// Same encoders, one unmasked view, no EMA.
    pub fn baseline(&self) -> Self {
        Self {
            views: 1,
            keep: 1.0,
            ema: None,
            ..self.clone()
        }
    }

    pub fn tokens_per_view(&self) -> usize {
        let f2 = self.block_factor * self.block_factor;
        budget(self.patches / f2, self.keep) * f2
    }
}

/// FLOPs of one branch, summed over its views and layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchFlops {
    pub views: usize,
    pub tokens: usize,
    pub attention_linear: f64,
    pub attention_quadratic: f64,
    pub attention: f64,
    pub pointwise: f64,
    pub total: f64,
}

impl BranchFlops {
    pub fn new(layers: usize, width: usize, tokens: usize, views: usize, factor: f64) -> Self {
        let (n, w) = (tokens as f64, width as f64);
        let scale = factor * layers as f64 * views as f64;
        let attention_linear = scale * 4.0 * n * w * w;
        let attention_quadratic = scale * 2.0 * n * n * w;
        let pointwise = scale * 8.0 * n * w * w;
        let attention = attention_linear + attention_quadratic;
        Self {
            views,
            tokens,
            attention_linear,
            attention_quadratic,
            attention,
            pointwise,
            total: attention + pointwise,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopLedger {
    pub online: BranchFlops,
    pub ema: Option<BranchFlops>,
    pub text: BranchFlops,
    pub total: f64,
    /// Totals of the single-view, unmasked, EMA-free configuration.
    pub baseline_online: f64,
    pub baseline_total: f64,
    pub ratio_total: f64,
    pub ratio_online: f64,
    pub ratio_online_attention: f64,
    pub ratio_online_attention_quadratic: f64,
    /// EMA forward relative to one full-resolution forward.
    pub ratio_ema_forward: Option<f64>,
}

fn branches(spec: &FlopSpec) -> (BranchFlops, Option<BranchFlops>, BranchFlops) {
    let online = BranchFlops::new(
        spec.visual_layers,
        spec.visual_width,
        spec.tokens_per_view(),
        spec.views,
        spec.train_factor,
    );
    let ema = spec.ema.map(|res| {
        let tokens = match res {
            EmaResolution::Full => spec.patches,
            EmaResolution::Half => spec.patches / 4,
        };
        BranchFlops::new(spec.visual_layers, spec.visual_width, tokens, 1, 1.0)
    });
    let text = BranchFlops::new(spec.text_layers, spec.text_width, spec.text_tokens, 1, spec.train_factor);
    (online, ema, text)
}

pub fn flop_model(spec: &FlopSpec) -> FlopLedger {
    let (online, ema, text) = branches(spec);
    let (base_online, _, base_text) = branches(&spec.baseline());
    let total = online.total + ema.as_ref().map_or(0.0, |e| e.total) + text.total;
    let baseline_total = base_online.total + base_text.total;
    let full_forward = BranchFlops::new(spec.visual_layers, spec.visual_width, spec.patches, 1, 1.0).total;
    FlopLedger {
        ratio_total: total / baseline_total,
        ratio_online: online.total / base_online.total,
        ratio_online_attention: online.attention / base_online.attention,
        ratio_online_attention_quadratic: online.attention_quadratic / base_online.attention_quadratic,
        ratio_ema_forward: ema.as_ref().map(|e| e.total / full_forward),
        baseline_online: base_online.total,
        baseline_total,
        total,
        online,
        ema,
        text,
    }
}
