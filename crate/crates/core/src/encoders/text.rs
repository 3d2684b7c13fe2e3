//! Causal text transformer pooled at the EOS position.

use ndgrad::{Graph, KeyMask, Var};
use rand::Rng;

use crate::encoders::block::{block_forward, gaussian, init_block, init_layer_norm, layer_norm, linear_init};
use crate::encoders::config::TextEncoderConfig;
use crate::error::{AclipError, Result};
use crate::params::{Bound, ParamSet};

pub fn init_text(p: &mut ParamSet, cfg: &TextEncoderConfig, rng: &mut impl Rng) {
    let w = cfg.width;
    p.insert("text.tok", gaussian(&[cfg.vocab_size, w], 0.02, rng), true, true);
    p.insert("text.pos", gaussian(&[cfg.context_length, w], 0.01, rng), true, false);
    for l in 0..cfg.layers {
        init_block(p, &format!("text.blocks.{l}"), w, rng);
    }
    init_layer_norm(p, "text.ln_final", w);
    p.insert("text.proj", linear_init(w, cfg.embed_dim, rng), true, true);
}

/// Position of the single EOS id, validated.
pub fn eos_position(ids: &[usize], cfg: &TextEncoderConfig) -> Result<usize> {
    if ids.is_empty() || ids.len() > cfg.context_length {
        return Err(AclipError::Format {
            offset: 0,
            detail: format!(
                "token sequence of length {} exceeds context {}",
                ids.len(),
                cfg.context_length
            ),
        });
    }
    if let Some((at, &bad)) = ids.iter().enumerate().find(|(_, &i)| i >= cfg.vocab_size) {
        return Err(AclipError::Format {
            offset: at,
            detail: format!("token id {bad} outside vocabulary of {}", cfg.vocab_size),
        });
    }
    let mut eos = ids.iter().enumerate().filter(|(_, &i)| i == cfg.eos_id).map(|(p, _)| p);
    match (eos.next(), eos.next()) {
        (Some(p), None) => Ok(p),
        (None, _) => Err(AclipError::Format {
            offset: ids.len(),
            detail: "missing EOS token".into(),
        }),
        (Some(_), Some(second)) => Err(AclipError::Format {
            offset: second,
            detail: "more than one EOS token".into(),
        }),
    }
}

/// Encodes a batch of token sequences to `[B, width]` features taken at each
/// sequence's EOS. Attention is causal, so tokens after EOS never reach it;
/// the batch is cut just past the latest EOS.
pub fn text_forward(g: &mut Graph, p: &Bound, cfg: &TextEncoderConfig, ids: &[Vec<usize>]) -> Result<Var> {
    if ids.is_empty() {
        return Err(AclipError::Argument("empty text batch".into()));
    }
    let eos: Vec<usize> = ids
        .iter()
        .map(|seq| eos_position(seq, cfg))
        .collect::<Result<_>>()?;
    let b = ids.len();
    let len = eos.iter().max().expect("non-empty") + 1;
    let flat: Vec<usize> = ids
        .iter()
        .flat_map(|seq| (0..len).map(move |i| seq.get(i).copied().unwrap_or(0)))
        .collect();
    let x = g.embedding_lookup(p.var("text.tok")?, &flat)?;
    let x = g.reshape(x, &[b, len, cfg.width])?;
    let positions: Vec<usize> = (0..len).collect();
    let pos = g.embedding_lookup(p.var("text.pos")?, &positions)?;
    let mut x = g.add(x, pos)?;
    let mask = KeyMask::causal(len);
    for l in 0..cfg.layers {
        let (next, _) = block_forward(g, p, &format!("text.blocks.{l}"), x, cfg.heads, Some(mask.clone()))?;
        x = next;
    }
    let x = layer_norm(g, p, "text.ln_final", x)?;
    let x = g.reshape(x, &[b * len, cfg.width])?;
    let rows: Vec<usize> = eos.iter().enumerate().map(|(i, &e)| i * len + e).collect();
    Ok(g.gather(x, &rows, 0)?)
}
