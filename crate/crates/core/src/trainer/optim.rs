//! Learning-rate schedule and AdamW.

use indexmap::IndexMap;
use ndgrad::Tensor;

use crate::error::{AclipError, Result};
use crate::params::ParamSet;

/// Linear warmup from 0 to `peak` over `warmup` steps, then cosine decay to
/// 0 at `total`. `t` counts optimizer updates.
pub fn lr_schedule(t: usize, peak: f64, warmup: usize, total: usize) -> f64 {
    if t < warmup {
        return peak * t as f64 / warmup as f64;
    }
    if t >= total || total <= warmup {
        return if t >= total { 0.0 } else { peak };
    }
    let progress = (t - warmup) as f64 / (total - warmup) as f64;
    0.5 * peak * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// First and second moments plus the update counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub t: usize,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

impl AdamW {
    /// One bias-corrected update of every trainable parameter that has a
    /// gradient. Decay is decoupled: `p <- p (1 - lr wd)` before the Adam
    /// step, and only for entries flagged `decay`.
    pub fn step(
        &self,
        params: &mut ParamSet,
        grads: &IndexMap<String, Tensor>,
        state: &mut AdamState,
        lr: f64,
    ) -> Result<()> {
        state.t += 1;
        let t = state.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let Some(g) = grads.get(name) else { continue };
            if g.shape() != p.value.shape() {
                return Err(AclipError::Structural(format!(
                    "{name}: gradient {:?} vs parameter {:?}",
                    g.shape(),
                    p.value.shape()
                )));
            }
            let m = state.m.get_mut(name)?.data_mut();
            for (mi, &gi) in m.iter_mut().zip(g.data()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = state.v.get_mut(name)?.data_mut();
            for (vi, &gi) in v.iter_mut().zip(g.data()) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let (m, v) = (state.m.get(name)?.data(), state.v.get(name)?.data());
            let decay = if p.decay { 1.0 - lr * self.weight_decay } else { 1.0 };
            for ((pi, &mi), &vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                let m_hat = mi / c1;
                let v_hat = vi / c2;
                *pi = *pi * decay - lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
