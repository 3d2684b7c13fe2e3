//! Projection and predictor MLPs for the auxiliary objectives.

use ndgrad::{Graph, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::block::linear_init;
use crate::error::Result;
use crate::params::{Bound, ParamSet};

/// Online-to-online auxiliary objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SslKind {
    #[default]
    None,
    Simclr,
    Simsiam,
}

fn init_mlp(p: &mut ParamSet, prefix: &str, dims: [usize; 3], rng: &mut impl Rng) {
    p.insert(format!("{prefix}.w1"), linear_init(dims[0], dims[1], rng), true, true);
    p.insert(format!("{prefix}.b1"), Tensor::zeros(&[dims[1]]), true, false);
    p.insert(format!("{prefix}.w2"), linear_init(dims[1], dims[2], rng), true, true);
    p.insert(format!("{prefix}.b2"), Tensor::zeros(&[dims[2]]), true, false);
}

/// Registers `ssl.proj` (+ `ssl.pred` for SimSiam) and, with `byol`,
/// `byol.proj` + `byol.pred`. Projections map `width -> 4D -> D`, predictors
/// `D -> D/2 -> D`.
pub fn init_ssl_heads(
    p: &mut ParamSet,
    kind: SslKind,
    byol: bool,
    width: usize,
    embed_dim: usize,
    rng: &mut impl Rng,
) {
    let proj = [width, 4 * embed_dim, embed_dim];
    let pred = [embed_dim, (embed_dim / 2).max(1), embed_dim];
    if kind != SslKind::None {
        init_mlp(p, "ssl.proj", proj, rng);
    }
    if kind == SslKind::Simsiam {
        init_mlp(p, "ssl.pred", pred, rng);
    }
    if byol {
        init_mlp(p, "byol.proj", proj, rng);
        init_mlp(p, "byol.pred", pred, rng);
    }
}

/// `gelu(x W1 + b1) W2 + b2`
pub fn mlp2(g: &mut Graph, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let h = g.linear(x, p.var(&format!("{prefix}.w1"))?, Some(p.var(&format!("{prefix}.b1"))?))?;
    let h = g.gelu(h);
    Ok(g.linear(h, p.var(&format!("{prefix}.w2"))?, Some(p.var(&format!("{prefix}.b2"))?))?)
}
