//! Pre-norm transformer block shared by both encoders.

use ndgrad::{Graph, KeyMask, Tensor, Var};
use rand::Rng;

use crate::error::Result;
use crate::params::{Bound, ParamSet};
use crate::rng::normal;

pub(crate) const LN_EPS: f64 = 1e-5;

pub(crate) fn gaussian(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| std * normal(rng)).collect();
    Tensor::new(shape, data).expect("positive extents")
}

/// Linear weight `[fan_in, fan_out]` with variance `1 / fan_in`.
pub(crate) fn linear_init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    gaussian(&[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt(), rng)
}

pub(crate) fn init_layer_norm(p: &mut ParamSet, prefix: &str, width: usize) {
    p.insert(format!("{prefix}.g"), Tensor::ones(&[width]), true, false);
    p.insert(format!("{prefix}.b"), Tensor::zeros(&[width]), true, false);
}

/// Registers one block's parameters under `prefix`. The key projection has
/// no bias: a per-head constant added to every key cannot change a softmax.
pub(crate) fn init_block(p: &mut ParamSet, prefix: &str, width: usize, rng: &mut impl Rng) {
    init_layer_norm(p, &format!("{prefix}.ln1"), width);
    for name in ["wq", "wk", "wv", "wo"] {
        p.insert(
            format!("{prefix}.attn.{name}"),
            linear_init(width, width, rng),
            true,
            true,
        );
    }
    for name in ["bq", "bv", "bo"] {
        p.insert(format!("{prefix}.attn.{name}"), Tensor::zeros(&[width]), true, false);
    }
    init_layer_norm(p, &format!("{prefix}.ln2"), width);
    p.insert(format!("{prefix}.mlp.w1"), linear_init(width, 4 * width, rng), true, true);
    p.insert(format!("{prefix}.mlp.b1"), Tensor::zeros(&[4 * width]), true, false);
    p.insert(format!("{prefix}.mlp.w2"), linear_init(4 * width, width, rng), true, true);
    p.insert(format!("{prefix}.mlp.b2"), Tensor::zeros(&[width]), true, false);
}

pub(crate) fn layer_norm(g: &mut Graph, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let gain = p.var(&format!("{prefix}.g"))?;
    let bias = p.var(&format!("{prefix}.b"))?;
    Ok(g.layer_norm(x, gain, bias, LN_EPS)?)
}

/// `[B, n, H*C] -> [B, H, n, C]`
fn split_heads(g: &mut Graph, x: Var, heads: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let r = g.reshape(x, &[s[0], s[1], heads, s[2] / heads])?;
    Ok(g.permute(r, &[0, 2, 1, 3])?)
}

/// Runs one block on `x: [B, n, width]`. Returns the new residual stream and
/// the attention probabilities `[B, H, n, n]`.
pub(crate) fn block_forward(
    g: &mut Graph,
    p: &Bound,
    prefix: &str,
    x: Var,
    heads: usize,
    mask: Option<KeyMask>,
) -> Result<(Var, Var)> {
    let shape = g.shape(x).to_vec();
    let (b, n, width) = (shape[0], shape[1], shape[2]);
    let head_dim = width / heads;
    let var = |name: &str| p.var(&format!("{prefix}.{name}"));

    let h = layer_norm(g, p, &format!("{prefix}.ln1"), x)?;
    let q = g.linear(h, var("attn.wq")?, Some(var("attn.bq")?))?;
    let k = g.linear(h, var("attn.wk")?, None)?;
    let v = g.linear(h, var("attn.wv")?, Some(var("attn.bv")?))?;
    let q = split_heads(g, q, heads)?;
    let v = split_heads(g, v, heads)?;
    let k = g.reshape(k, &[b, n, heads, head_dim])?;
    let kt = g.permute(k, &[0, 2, 3, 1])?;
    let logits = g.matmul(q, kt)?;
    let logits = g.scale(logits, 1.0 / (head_dim as f64).sqrt());
    let attn = g.softmax(logits, mask)?;
    let ctx = g.matmul(attn, v)?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[b, n, width])?;
    let out = g.linear(ctx, var("attn.wo")?, Some(var("attn.bo")?))?;
    let x = g.add(x, out)?;

    let h = layer_norm(g, p, &format!("{prefix}.ln2"), x)?;
    let h = g.linear(h, var("mlp.w1")?, Some(var("mlp.b1")?))?;
    let h = g.gelu(h);
    let h = g.linear(h, var("mlp.w2")?, Some(var("mlp.b2")?))?;
    let x = g.add(x, h)?;
    Ok((x, attn))
}
