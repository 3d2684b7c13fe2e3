//! Contrastive and self-supervised objectives.

pub mod heads;

use ndgrad::{Graph, KeyMask, Reduce, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{AclipError, Result};

pub use heads::{init_ssl_heads, mlp2, SslKind};

/// Name of the learnable log-temperature in a parameter set.
pub const LOG_TAU: &str = "logit.log_tau";

/// Bounds applied to `tau = exp(log_tau)` after every optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureParam {
    pub init: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for TemperatureParam {
    fn default() -> Self {
        Self {
            init: 0.07,
            min: 0.01,
            max: 1.0,
        }
    }
}

impl TemperatureParam {
    pub fn initial_log_tau(&self) -> Tensor {
        Tensor::scalar(self.init.ln())
    }

    pub fn clamp_log_tau(&self, log_tau: f64) -> f64 {
        log_tau.clamp(self.min.ln(), self.max.ln())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min > 0.0 && self.min <= self.init && self.init <= self.max) {
            return Err(AclipError::Config(format!(
                "temperature {} must satisfy 0 < {} <= init <= {}",
                self.init, self.min, self.max
            )));
        }
        Ok(())
    }
}

/// Fails unless every row of `x` has L2 norm within `tol` of one.
pub fn check_unit_rows(x: &Tensor, tol: f64, what: &str) -> Result<()> {
    let cols = *x.shape().last().expect("rank >= 1");
    for (i, row) in x.data().chunks(cols).enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > tol {
            return Err(AclipError::Contract(format!("{what} row {i} has norm {norm}")));
        }
    }
    Ok(())
}

fn diagonal_ce(g: &mut Graph, logits: Var, mask: Option<KeyMask>, targets: &[usize]) -> Result<Var> {
    let ls = g.log_softmax(logits, mask)?;
    let picked = g.pick(ls, targets)?;
    let mean = g.mean_all(picked);
    Ok(g.scale(mean, -1.0))
}

/// Symmetric InfoNCE over cosine similarities scaled by `1 / tau`,
/// `tau = exp(log_tau)`: half image-to-text plus half text-to-image.
pub fn clip_loss(g: &mut Graph, e_i: Var, e_t: Var, log_tau: Var) -> Result<Var> {
    check_unit_rows(g.value(e_i), 1e-4, "image embedding")?;
    check_unit_rows(g.value(e_t), 1e-4, "text embedding")?;
    let (bi, bt) = (g.shape(e_i)[0], g.shape(e_t)[0]);
    if bi != bt || bi == 0 {
        return Err(AclipError::Dimension(format!("{bi} image rows vs {bt} text rows")));
    }
    let tt = g.transpose(e_t)?;
    let sims = g.matmul(e_i, tt)?;
    let neg = g.scale(log_tau, -1.0);
    let inv_tau = g.exp(neg);
    let logits = g.mul_scalar(sims, inv_tau)?;
    let targets: Vec<usize> = (0..bi).collect();
    let l_v = diagonal_ce(g, logits, None, &targets)?;
    let logits_t = g.transpose(logits)?;
    let l_l = diagonal_ce(g, logits_t, None, &targets)?;
    let sum = g.add(l_v, l_l)?;
    Ok(g.scale(sum, 0.5))
}

/// Mean of [`clip_loss`] over views sharing one text batch. Returns the mean
/// and the per-view terms.
pub fn multi_view_clip_loss(g: &mut Graph, views: &[Var], e_t: Var, log_tau: Var) -> Result<(Var, Vec<Var>)> {
    if views.is_empty() {
        return Err(AclipError::Argument("no image views".into()));
    }
    let per_view = views
        .iter()
        .map(|&v| clip_loss(g, v, e_t, log_tau))
        .collect::<Result<Vec<_>>>()?;
    let mut acc = per_view[0];
    for &l in &per_view[1..] {
        acc = g.add(acc, l)?;
    }
    let mean = g.scale(acc, 1.0 / views.len() as f64);
    Ok((mean, per_view))
}

/// NT-Xent over the `2B` stacked views, self-pairs excluded; the positive of
/// row `i` is row `i + B` (mod `2B`).
pub fn simclr_loss(g: &mut Graph, z1: Var, z2: Var, tau_ssl: f64) -> Result<Var> {
    let b = g.shape(z1)[0];
    if b == 0 || g.shape(z2)[0] != b {
        return Err(AclipError::Argument(format!(
            "simclr needs equal non-empty batches, got {} and {}",
            b,
            g.shape(z2)[0]
        )));
    }
    let z = g.concat(&[z1, z2], 0)?;
    let zt = g.transpose(z)?;
    let sims = g.matmul(z, zt)?;
    let logits = g.scale(sims, 1.0 / tau_ssl);
    let targets: Vec<usize> = (0..2 * b).map(|i| (i + b) % (2 * b)).collect();
    diagonal_ce(g, logits, Some(KeyMask::off_diagonal(2 * b)?), &targets)
}

/// Mean over rows of `<a_i, b_i>`.
fn mean_row_dot(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let prod = g.mul(a, b)?;
    let dots = g.reduce(prod, 1, Reduce::Sum)?;
    Ok(g.mean_all(dots))
}

/// `-(cos(p1, sg(z2)) + cos(p2, sg(z1))) / 2` on unit rows, averaged over the
/// batch. Nothing flows into `z1` or `z2`.
pub fn simsiam_loss(g: &mut Graph, p1: Var, p2: Var, z1: Var, z2: Var) -> Result<Var> {
    let z1 = g.detach(z1);
    let z2 = g.detach(z2);
    let a = mean_row_dot(g, p1, z2)?;
    let b = mean_row_dot(g, p2, z1)?;
    let s = g.add(a, b)?;
    Ok(g.scale(s, -0.5))
}

/// Mean over views of `2 - 2 cos(p_v, z_ema)` on unit rows.
pub fn byol_loss(g: &mut Graph, p_online: &[Var], z_ema: Var) -> Result<Var> {
    if p_online.is_empty() {
        return Err(AclipError::Argument("byol needs at least one view".into()));
    }
    let target = g.detach(z_ema);
    let mut acc = None;
    for &p in p_online {
        let cos = mean_row_dot(g, p, target)?;
        acc = Some(match acc {
            None => cos,
            Some(a) => g.add(a, cos)?,
        });
    }
    let mean_cos = g.scale(acc.expect("non-empty"), 1.0 / p_online.len() as f64);
    let neg = g.scale(mean_cos, -2.0);
    let two = g.constant(Tensor::scalar(2.0));
    Ok(g.add(neg, two)?)
}

/// Scalar components of one step's objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub vl_per_view: Vec<f64>,
    pub vl_mean: f64,
    pub ssl_online: Option<f64>,
    pub ssl_ema: Option<f64>,
    pub total: f64,
    pub tau: f64,
}

/// Graph nodes feeding [`total_loss`].
pub struct LossParts {
    pub vl_mean: Var,
    pub vl_per_view: Vec<Var>,
    pub ssl_online: Option<Var>,
    pub ssl_ema: Option<Var>,
}

fn finite(step: usize, component: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(AclipError::Divergence {
            step,
            component: component.to_string(),
            value,
        })
    }
}

/// `vl_mean + lambda (ssl_online + ssl_ema)` over the present terms.
pub fn total_loss(g: &mut Graph, parts: &LossParts, lambda: f64, tau: f64, step: usize) -> Result<(Var, LossReport)> {
    let vl_per_view = parts
        .vl_per_view
        .iter()
        .enumerate()
        .map(|(i, &v)| finite(step, &format!("vl_view_{i}"), g.value(v).item()))
        .collect::<Result<Vec<_>>>()?;
    let vl_mean = finite(step, "vl_mean", g.value(parts.vl_mean).item())?;
    let ssl_online = parts
        .ssl_online
        .map(|v| finite(step, "ssl_online", g.value(v).item()))
        .transpose()?;
    let ssl_ema = parts
        .ssl_ema
        .map(|v| finite(step, "ssl_ema", g.value(v).item()))
        .transpose()?;
    let mut total = parts.vl_mean;
    if lambda != 0.0 {
        for v in [parts.ssl_online, parts.ssl_ema].into_iter().flatten() {
            let w = g.scale(v, lambda);
            total = g.add(total, w)?;
        }
    }
    let total_value = finite(step, "total", g.value(total).item())?;
    let report = LossReport {
        vl_per_view,
        vl_mean,
        ssl_online,
        ssl_ema,
        total: total_value,
        tau: finite(step, "tau", tau)?,
    };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(g: &mut Graph, r: &[Vec<f64>]) -> Var {
        g.param(Tensor::from_rows(r).unwrap())
    }

    fn log_tau(g: &mut Graph, tau: f64) -> Var {
        g.param(Tensor::scalar(tau.ln()))
    }

    #[test]
    fn clip_closed_forms() {
        let mut g = Graph::new();
        let e = rows(&mut g, &[vec![0.6, 0.8]]);
        let t = log_tau(&mut g, 0.07);
        let l = clip_loss(&mut g, e, e, t).unwrap();
        assert_eq!(g.value(l).item(), 0.0);

        let same = vec![vec![0.0, 1.0]; 4];
        let ei = rows(&mut g, &same);
        let et = rows(&mut g, &same);
        let l = clip_loss(&mut g, ei, et, t).unwrap();
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-6);

        let one_hot = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let ei = rows(&mut g, &one_hot);
        let et = rows(&mut g, &one_hot);
        let t1 = log_tau(&mut g, 1.0);
        let l = clip_loss(&mut g, ei, et, t1).unwrap();
        assert!((g.value(l).item() - (1.0 + (-1f64).exp()).ln()).abs() < 1e-6);
    }

    #[test]
    fn clip_rejects_non_unit_rows() {
        let mut g = Graph::new();
        let e = rows(&mut g, &[vec![3.0, 4.0]]);
        let t = log_tau(&mut g, 0.07);
        assert!(matches!(clip_loss(&mut g, e, e, t), Err(AclipError::Contract(_))));
    }

    #[test]
    fn simclr_closed_forms() {
        let mut g = Graph::new();
        let z = rows(&mut g, &[vec![1.0, 0.0]]);
        let l = simclr_loss(&mut g, z, z, 0.1).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let z = rows(&mut g, &[vec![1.0, 0.0], vec![1.0, 0.0]]);
        let l = simclr_loss(&mut g, z, z, 1.0).unwrap();
        assert!((g.value(l).item() - 3f64.ln()).abs() < 1e-6);
        let z1 = rows(&mut g, &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let l = simclr_loss(&mut g, z1, z1, 0.05).unwrap();
        assert!(g.value(l).item() < 1e-3);
    }

    #[test]
    fn simsiam_and_byol_extremes() {
        let mut g = Graph::new();
        let a = rows(&mut g, &[vec![1.0, 0.0]]);
        let b = rows(&mut g, &[vec![0.0, 1.0]]);
        let c = rows(&mut g, &[vec![-1.0, 0.0]]);
        let l = simsiam_loss(&mut g, a, a, a, a).unwrap();
        assert_eq!(g.value(l).item(), -1.0);
        let l = simsiam_loss(&mut g, a, a, b, b).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        for (p, want) in [(a, 0.0), (b, 2.0), (c, 4.0)] {
            let l = byol_loss(&mut g, &[p], a).unwrap();
            assert_eq!(g.value(l).item(), want);
        }
    }

    #[test]
    fn simsiam_targets_get_no_gradient() {
        let mut g = Graph::new();
        let p1 = rows(&mut g, &[vec![0.6, 0.8]]);
        let p2 = rows(&mut g, &[vec![0.8, 0.6]]);
        let z1 = rows(&mut g, &[vec![1.0, 0.0]]);
        let z2 = rows(&mut g, &[vec![0.0, 1.0]]);
        let l = simsiam_loss(&mut g, p1, p2, z1, z2).unwrap();
        let grads = g.backward(l);
        assert!(grads.get(z1).is_none() && grads.get(z2).is_none());
        assert!(grads.get(p1).is_some());
    }

    #[test]
    fn total_composition() {
        let mut g = Graph::new();
        let vl = g.constant(Tensor::scalar(1.0));
        let simclr = g.constant(Tensor::scalar(0.5));
        let byol = g.constant(Tensor::scalar(0.25));
        let parts = LossParts {
            vl_mean: vl,
            vl_per_view: vec![vl],
            ssl_online: Some(simclr),
            ssl_ema: Some(byol),
        };
        let (_, r) = total_loss(&mut g, &parts, 1.0, 0.07, 0).unwrap();
        assert_eq!(r.total, 1.75);
        let (_, r) = total_loss(&mut g, &parts, 0.0, 0.07, 0).unwrap();
        assert_eq!(r.total, 1.0);
        let bad = g.constant(Tensor::scalar(f64::NAN));
        let parts = LossParts {
            ssl_online: Some(bad),
            ..parts
        };
        match total_loss(&mut g, &parts, 1.0, 0.07, 12) {
            Err(AclipError::Divergence { step, component, .. }) => {
                assert_eq!((step, component.as_str()), (12, "ssl_online"));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
