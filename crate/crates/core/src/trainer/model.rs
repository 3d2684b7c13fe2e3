//! Parameter layout of the full model and gradient-free encoding helpers.

use ndgrad::{Graph, Tensor};

use crate::dataio::Image;
use crate::encoders::{init_text, init_visual, patch_batch, project_and_normalize, text_forward, vit_forward};
use crate::encoders::{TextEncoderConfig, VisualEncoderConfig};
use crate::error::Result;
use crate::geometry::CropRect;
use crate::losses::{init_ssl_heads, LOG_TAU};
use crate::params::ParamSet;
use crate::rng::{stream, Domain};
use crate::trainer::config::TrainConfig;

/// Parameter prefixes mirrored by the EMA shadow.
pub const EMA_PREFIXES: [&str; 2] = ["visual.", "byol.proj."];

/// Encoder geometry resolved against a vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelDims {
    pub visual: VisualEncoderConfig,
    pub text: TextEncoderConfig,
}

impl ModelDims {
    pub fn new(cfg: &TrainConfig, vocab_size: usize) -> Result<Self> {
        let dims = Self {
            visual: cfg.visual_config(),
            text: cfg.text_config(vocab_size),
        };
        dims.visual.validate()?;
        dims.text.validate()?;
        Ok(dims)
    }
}

/// Fresh parameters drawn from `stream(seed, Init)`.
pub fn init_model(cfg: &TrainConfig, dims: &ModelDims) -> ParamSet {
    let mut rng = stream(cfg.seed, Domain::Init, &[]);
    let mut p = ParamSet::new();
    init_visual(&mut p, &dims.visual, &mut rng);
    init_text(&mut p, &dims.text, &mut rng);
    p.insert(LOG_TAU, cfg.temperature.initial_log_tau(), true, false);
    init_ssl_heads(
        &mut p,
        cfg.ssl,
        cfg.byol,
        dims.visual.width,
        dims.visual.embed_dim,
        &mut rng,
    );
    p
}

/// Online parameters with the shadow's entries swapped in.
pub fn with_shadow(online: &ParamSet, shadow: &ParamSet) -> Result<ParamSet> {
    let mut out = online.clone();
    for (name, p) in shadow.iter() {
        *out.get_mut(name)? = p.value.clone();
    }
    Ok(out)
}

const CHUNK: usize = 64;

/// Unit image embeddings `[M, D]` of whole images resized to the encoder
/// input size.
pub fn embed_images(params: &ParamSet, vcfg: &VisualEncoderConfig, images: &[Image]) -> Result<Tensor> {
    let mut rows = Vec::with_capacity(images.len() * vcfg.embed_dim);
    for chunk in images.chunks(CHUNK) {
        let resized: Vec<Image> = chunk
            .iter()
            .map(|img| img.crop_resize(&CropRect::FULL, vcfg.image_size, vcfg.image_size))
            .collect();
        let patches = patch_batch(&resized, vcfg.patch_size)?;
        let mut g = Graph::new();
        let p = params.bind(&mut g, true);
        let out = vit_forward(&mut g, &p, vcfg, &patches, None, None)?;
        let e = project_and_normalize(&mut g, out.cls, p.var("visual.proj")?)?;
        rows.extend_from_slice(g.value(e).data());
    }
    Ok(Tensor::new(&[images.len(), vcfg.embed_dim], rows)?)
}

/// Unit text embeddings `[M, D]`.
pub fn embed_texts(params: &ParamSet, tcfg: &TextEncoderConfig, ids: &[Vec<usize>]) -> Result<Tensor> {
    let mut rows = Vec::with_capacity(ids.len() * tcfg.embed_dim);
    for chunk in ids.chunks(CHUNK) {
        let mut g = Graph::new();
        let p = params.bind(&mut g, true);
        let feat = text_forward(&mut g, &p, tcfg, chunk)?;
        let e = project_and_normalize(&mut g, feat, p.var("text.proj")?)?;
        rows.extend_from_slice(g.value(e).data());
    }
    Ok(Tensor::new(&[ids.len(), tcfg.embed_dim], rows)?)
}
