//! Batch preparation and the differentiable objective of one step.

use ndgrad::{Graph, Tensor, Var};
use rand::Rng;

use crate::attnmask::{build_view_plan, enclosing_rect, score_images, EmaState, ViewPlan};
use crate::dataio::{Corpus, Image, Vocab};
use crate::encoders::{patch_batch, project_and_normalize, text_forward, vit_forward};
use crate::error::{AclipError, Result};
use crate::geometry::CropRect;
use crate::losses::{byol_loss, mlp2, multi_view_clip_loss, simclr_loss, simsiam_loss, total_loss};
use crate::losses::{LossParts, LossReport, SslKind, LOG_TAU};
use crate::params::Bound;
use crate::rng::{stream, Domain};
use crate::trainer::augment::{color_augment, random_resized_crop, ColorPolicy};
use crate::trainer::config::TrainConfig;
use crate::trainer::model::ModelDims;

const ASPECT: (f64, f64) = (3.0 / 4.0, 4.0 / 3.0);

/// One image's augmented inputs before masking.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSample {
    pub image_id: usize,
    pub view_rects: Vec<CropRect>,
    pub view_pixels: Vec<Image>,
    pub ema_rect: CropRect,
    pub tokens: Vec<usize>,
}

/// Everything the differentiable part of a step consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedBatch {
    pub step: usize,
    pub image_ids: Vec<usize>,
    /// Per view `[B, N, 3 P^2]`.
    pub view_patches: Vec<Tensor>,
    pub plans: Vec<ViewPlan>,
    pub tokens: Vec<Vec<usize>>,
    /// Unit BYOL targets from the shadow `[B, D]`.
    pub byol_target: Option<Tensor>,
}

impl PreparedBatch {
    /// Keep lists of view `v` across the batch.
    pub fn kept(&self, v: usize) -> Vec<Vec<usize>> {
        self.plans.iter().map(|p| p.kept[v].clone()).collect()
    }
}

/// Crops, photometric jitter and caption choice for one image. Every random
/// draw comes from a stream keyed by `(seed, step, image_id[, view])`.
pub fn augment_sample(
    corpus: &Corpus,
    vocab: &Vocab,
    cfg: &TrainConfig,
    dims: &ModelDims,
    step: usize,
    image_id: usize,
) -> Result<AugmentedSample> {
    let record = &corpus.records[image_id];
    let image = &corpus.images[image_id];
    let coords = [step as u64, image_id as u64];
    let mut crng = stream(cfg.seed, Domain::Caption, &coords);
    let caption = &record.captions[crng.gen_range(0..record.captions.len())];
    let tokens = vocab.tokenize(caption, dims.text.context_length);
    let policy = if cfg.ssl != SslKind::None {
        ColorPolicy::default()
    } else {
        ColorPolicy::off()
    };
    let size = dims.visual.image_size;
    let mut view_rects = Vec::with_capacity(cfg.views);
    let mut view_pixels = Vec::with_capacity(cfg.views);
    for v in 0..cfg.views {
        let vc = [step as u64, image_id as u64, v as u64];
        let rect = random_resized_crop(
            &mut stream(cfg.seed, Domain::Crop, &vc),
            cfg.crop_scale_min,
            cfg.crop_scale_max,
            ASPECT,
        )?;
        let pixels = image.crop_resize(&rect, size, size);
        let pixels = color_augment(&pixels, &mut stream(cfg.seed, Domain::Color, &vc), &policy);
        view_rects.push(rect);
        view_pixels.push(pixels);
    }
    Ok(AugmentedSample {
        image_id,
        ema_rect: enclosing_rect(&view_rects)?,
        view_rects,
        view_pixels,
        tokens,
    })
}

/// Runs augmentation, the gradient-free EMA pass and view planning for one
/// batch.
pub fn prepare_batch(
    corpus: &Corpus,
    vocab: &Vocab,
    cfg: &TrainConfig,
    dims: &ModelDims,
    ema: &EmaState,
    step: usize,
    image_ids: &[usize],
) -> Result<PreparedBatch> {
    let samples = image_ids
        .iter()
        .map(|&id| augment_sample(corpus, vocab, cfg, dims, step, id))
        .collect::<Result<Vec<_>>>()?;
    let mask_cfg = cfg.mask_config();
    let (maps, byol_target) = if cfg.needs_ema_pass() {
        let images: Vec<&Image> = image_ids.iter().map(|&i| &corpus.images[i]).collect();
        let rects: Vec<CropRect> = samples.iter().map(|s| s.ema_rect).collect();
        let scored = score_images(
            &ema.shadow,
            &dims.visual,
            &images,
            &rects,
            cfg.ema_resolution,
            cfg.score_layers,
        )?;
        let target = if cfg.byol {
            let mut g = Graph::new();
            let p = ema.shadow.bind(&mut g, true);
            let cls = g.constant(scored.cls);
            let z = mlp2(&mut g, &p, "byol.proj", cls)?;
            let z = g.normalize_rows(z)?;
            Some(g.value(z).clone())
        } else {
            None
        };
        (Some(scored.maps), target)
    } else {
        (None, None)
    };
    let plans = samples
        .iter()
        .enumerate()
        .map(|(b, s)| {
            let map = maps.as_ref().filter(|_| mask_cfg.needs_scores()).map(|m| &m[b]);
            build_view_plan(map, &s.view_rects, &mask_cfg, &dims.visual, cfg.seed, step, s.image_id)
        })
        .collect::<Result<Vec<_>>>()?;
    let view_patches = (0..cfg.views)
        .map(|v| {
            let imgs: Vec<Image> = samples.iter().map(|s| s.view_pixels[v].clone()).collect();
            patch_batch(&imgs, dims.visual.patch_size)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedBatch {
        step,
        image_ids: image_ids.to_vec(),
        view_patches,
        plans,
        tokens: samples.into_iter().map(|s| s.tokens).collect(),
        byol_target,
    })
}

fn mean_of(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(g.scale(acc, 1.0 / terms.len() as f64))
}

/// Builds the full objective on `g` from bound parameters. Online SSL terms
/// are averaged over all view pairs `i < j`.
pub fn step_loss(
    g: &mut Graph,
    p: &Bound,
    batch: &PreparedBatch,
    cfg: &TrainConfig,
    dims: &ModelDims,
) -> Result<(Var, LossReport)> {
    let mut cls = Vec::with_capacity(cfg.views);
    let mut image_emb = Vec::with_capacity(cfg.views);
    for (v, patches) in batch.view_patches.iter().enumerate() {
        let kept = batch.kept(v);
        let out = vit_forward(g, p, &dims.visual, patches, Some(&kept), None)?;
        image_emb.push(project_and_normalize(g, out.cls, p.var("visual.proj")?)?);
        cls.push(out.cls);
    }
    let feat = text_forward(g, p, &dims.text, &batch.tokens)?;
    let text_emb = project_and_normalize(g, feat, p.var("text.proj")?)?;
    let log_tau = p.var(LOG_TAU)?;
    let tau = g.value(log_tau).item().exp();
    let (vl_mean, vl_per_view) = multi_view_clip_loss(g, &image_emb, text_emb, log_tau)?;

    let ssl_online = match cfg.ssl {
        SslKind::None => None,
        kind => {
            let mut z = Vec::with_capacity(cls.len());
            let mut pred = Vec::with_capacity(cls.len());
            for &c in &cls {
                let raw = mlp2(g, p, "ssl.proj", c)?;
                if kind == SslKind::Simsiam {
                    let q = mlp2(g, p, "ssl.pred", raw)?;
                    pred.push(g.normalize_rows(q)?);
                }
                z.push(g.normalize_rows(raw)?);
            }
            let mut terms = Vec::new();
            for i in 0..z.len() {
                for j in i + 1..z.len() {
                    terms.push(match kind {
                        SslKind::Simclr => simclr_loss(g, z[i], z[j], cfg.ssl_temperature)?,
                        _ => simsiam_loss(g, pred[i], pred[j], z[i], z[j])?,
                    });
                }
            }
            Some(mean_of(g, &terms)?)
        }
    };
    let ssl_ema = if cfg.byol {
        let target = batch
            .byol_target
            .clone()
            .ok_or_else(|| AclipError::Structural("byol enabled but no EMA targets prepared".into()))?;
        let target = g.constant(target);
        let mut preds = Vec::with_capacity(cls.len());
        for &c in &cls {
            let z = mlp2(g, p, "byol.proj", c)?;
            let q = mlp2(g, p, "byol.pred", z)?;
            preds.push(g.normalize_rows(q)?);
        }
        Some(byol_loss(g, &preds, target)?)
    } else {
        None
    };
    let parts = LossParts {
        vl_mean,
        vl_per_view,
        ssl_online,
        ssl_ema,
    };
    total_loss(g, &parts, cfg.ssl_weight, tau, batch.step)
}
