//! Vision transformer with a CLS token and exposed CLS attention rows.

use ndgrad::{Graph, Tensor, Var};
use rand::Rng;

use crate::dataio::Image;
use crate::encoders::block::{block_forward, gaussian, init_block, init_layer_norm, layer_norm, linear_init};
use crate::encoders::config::VisualEncoderConfig;
use crate::error::{AclipError, Result};
use crate::params::{Bound, ParamSet};

/// Splits an image into row-major `P x P` patches, each flattened
/// channel-major. Output `[N, 3 P^2]`.
pub fn patchify(img: &Image, patch: usize) -> Result<Tensor> {
    let (h, w) = (img.height(), img.width());
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(AclipError::Dimension(format!(
            "image {h}x{w} not divisible into {patch}px patches"
        )));
    }
    let (gh, gw) = (h / patch, w / patch);
    let dim = Image::CHANNELS * patch * patch;
    let mut data = Vec::with_capacity(gh * gw * dim);
    for py in 0..gh {
        for px in 0..gw {
            for c in 0..Image::CHANNELS {
                for y in 0..patch {
                    for x in 0..patch {
                        data.push(img.get(c, py * patch + y, px * patch + x));
                    }
                }
            }
        }
    }
    Ok(Tensor::new(&[gh * gw, dim], data)?)
}

/// Inverse of [`patchify`].
pub fn unpatchify(tokens: &Tensor, height: usize, width: usize, patch: usize) -> Result<Image> {
    let dim = Image::CHANNELS * patch * patch;
    if patch == 0 || height % patch != 0 || width % patch != 0 {
        return Err(AclipError::Dimension(format!(
            "image {height}x{width} not divisible into {patch}px patches"
        )));
    }
    let (gh, gw) = (height / patch, width / patch);
    if tokens.shape() != [gh * gw, dim] {
        return Err(AclipError::Dimension(format!(
            "tokens {:?} do not tile a {height}x{width} image",
            tokens.shape()
        )));
    }
    let mut img = Image::filled(height, width, [0.0; 3]);
    let mut it = tokens.data().iter();
    for py in 0..gh {
        for px in 0..gw {
            for c in 0..Image::CHANNELS {
                for y in 0..patch {
                    for x in 0..patch {
                        img.set(c, py * patch + y, px * patch + x, *it.next().expect("sized"));
                    }
                }
            }
        }
    }
    Ok(img)
}

/// Stacks per-image patch tokens into `[B, N, 3 P^2]`.
pub fn patch_batch(images: &[Image], patch: usize) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| AclipError::Argument("empty image batch".into()))?;
    let single = patchify(first, patch)?;
    let (n, dim) = (single.shape()[0], single.shape()[1]);
    let mut data = single.into_data();
    data.reserve((images.len() - 1) * n * dim);
    for img in &images[1..] {
        let t = patchify(img, patch)?;
        if t.shape() != [n, dim] {
            return Err(AclipError::Dimension("images in a batch differ in size".into()));
        }
        data.extend_from_slice(t.data());
    }
    Ok(Tensor::new(&[images.len(), n, dim], data)?)
}

pub fn init_visual(p: &mut ParamSet, cfg: &VisualEncoderConfig, rng: &mut impl Rng) {
    let w = cfg.width;
    let patch_trainable = !cfg.frozen_patch_embed;
    p.insert("visual.patch.w", linear_init(cfg.patch_dim(), w, rng), patch_trainable, true);
    p.insert("visual.patch.b", Tensor::zeros(&[w]), patch_trainable, false);
    p.insert("visual.cls", gaussian(&[1, w], 0.02, rng), true, false);
    p.insert("visual.pos_cls", gaussian(&[1, w], 0.02, rng), true, false);
    p.insert("visual.pos", gaussian(&[cfg.num_patches(), w], 0.02, rng), true, false);
    for l in 0..cfg.layers {
        init_block(p, &format!("visual.blocks.{l}"), w, rng);
    }
    init_layer_norm(p, "visual.ln_post", w);
    p.insert("visual.proj", linear_init(w, cfg.embed_dim, rng), true, true);
}

/// CLS-query attention rows, one tensor `[B, H, 1 + n_kept]` per layer.
/// Key 0 is the CLS token; key `j >= 1` is patch `kept[b][j - 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub layers: Vec<Tensor>,
    pub kept: Vec<Vec<usize>>,
    /// Patch grid `(rows, cols)` of the input the record was computed on.
    pub grid: (usize, usize),
}

impl AttentionRecord {
    pub fn batch(&self) -> usize {
        self.kept.len()
    }

    pub fn heads(&self) -> usize {
        self.layers.first().map_or(0, |t| t.shape()[1])
    }

    /// Attention of CLS on key `key` for image `b`, layer `l`, head `h`.
    pub fn weight(&self, l: usize, b: usize, h: usize, key: usize) -> f64 {
        let t = &self.layers[l];
        let (heads, keys) = (t.shape()[1], t.shape()[2]);
        t.data()[(b * heads + h) * keys + key]
    }
}

pub struct VitOutput {
    /// Post-norm CLS feature `[B, width]`.
    pub cls: Var,
    /// Post-norm patch features `[B, n_kept, width]`.
    pub patches: Var,
    pub attention: AttentionRecord,
}

fn check_keep(keep: &[usize], n: usize) -> Result<()> {
    if keep.is_empty() {
        return Err(AclipError::Index("empty keep list".into()));
    }
    for w in keep.windows(2) {
        if w[0] >= w[1] {
            return Err(AclipError::Index(format!(
                "keep indices must be distinct and sorted ascending, found {} before {}",
                w[0], w[1]
            )));
        }
    }
    if let Some(&last) = keep.last() {
        if last >= n {
            return Err(AclipError::Index(format!("keep index {last} out of range for {n} patches")));
        }
    }
    Ok(())
}

/// Encodes `patches: [B, N, 3 P^2]`, keeping only `keep[b]` patches of image
/// `b` when given. Position embeddings are gathered with the same indices.
/// `pos_table` overrides `visual.pos` (e.g. a resampled grid for a
/// lower-resolution input).
pub fn vit_forward(
    g: &mut Graph,
    p: &Bound,
    cfg: &VisualEncoderConfig,
    patches: &Tensor,
    keep: Option<&[Vec<usize>]>,
    pos_table: Option<Var>,
) -> Result<VitOutput> {
    let s = patches.shape();
    if s.len() != 3 || s[2] != cfg.patch_dim() {
        return Err(AclipError::Dimension(format!(
            "patch batch {s:?} does not match patch_dim {}",
            cfg.patch_dim()
        )));
    }
    let (b, n, dim) = (s[0], s[1], s[2]);
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n {
        return Err(AclipError::Dimension(format!("{n} patches do not form a square grid")));
    }
    let all: Vec<Vec<usize>>;
    let keep = match keep {
        Some(k) => {
            if k.len() != b {
                return Err(AclipError::Dimension(format!(
                    "{} keep lists for a batch of {b}",
                    k.len()
                )));
            }
            for kb in k {
                check_keep(kb, n)?;
            }
            if k.iter().any(|kb| kb.len() != k[0].len()) {
                return Err(AclipError::Dimension("keep lists differ in length".into()));
            }
            k
        }
        None => {
            all = vec![(0..n).collect(); b];
            &all
        }
    };
    let kept = keep[0].len();
    let mut data = Vec::with_capacity(b * kept * dim);
    for (bi, kb) in keep.iter().enumerate() {
        for &i in kb {
            let start = (bi * n + i) * dim;
            data.extend_from_slice(&patches.data()[start..start + dim]);
        }
    }
    let tokens = g.constant(Tensor::new(&[b, kept, dim], data)?);

    let x = g.linear(tokens, p.var("visual.patch.w")?, Some(p.var("visual.patch.b")?))?;
    let pos = match pos_table {
        Some(v) => v,
        None => p.var("visual.pos")?,
    };
    if g.shape(pos) != [n, cfg.width] {
        return Err(AclipError::Dimension(format!(
            "position table {:?} does not cover {n} patches",
            g.shape(pos)
        )));
    }
    let flat: Vec<usize> = keep.iter().flatten().copied().collect();
    let pos = g.embedding_lookup(pos, &flat)?;
    let pos = g.reshape(pos, &[b, kept, cfg.width])?;
    let x = g.add(x, pos)?;

    let cls = g.add(p.var("visual.cls")?, p.var("visual.pos_cls")?)?;
    let cls = g.embedding_lookup(cls, &vec![0; b])?;
    let cls = g.reshape(cls, &[b, 1, cfg.width])?;
    let mut x = g.concat(&[cls, x], 1)?;

    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let (next, attn) = block_forward(g, p, &format!("visual.blocks.{l}"), x, cfg.heads, None)?;
        x = next;
        // CLS query row of every head.
        let rows = g.value(attn);
        let keys = kept + 1;
        let mut cls_rows = Vec::with_capacity(b * cfg.heads * keys);
        for row in 0..b * cfg.heads {
            let start = row * keys * keys;
            cls_rows.extend_from_slice(&rows.data()[start..start + keys]);
        }
        layers.push(Tensor::new(&[b, cfg.heads, keys], cls_rows)?);
    }
    let x = layer_norm(g, p, "visual.ln_post", x)?;
    let cls = g.gather(x, &[0], 1)?;
    let cls = g.reshape(cls, &[b, cfg.width])?;
    let rest: Vec<usize> = (1..=kept).collect();
    let patches_out = g.gather(x, &rest, 1)?;
    Ok(VitOutput {
        cls,
        patches: patches_out,
        attention: AttentionRecord {
            layers,
            kept: keep.to_vec(),
            grid: (side, side),
        },
    })
}
