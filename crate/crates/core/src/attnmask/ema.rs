//! Exponential-moving-average shadow of the visual encoder.

use crate::error::{AclipError, Result};
use crate::params::ParamSet;

/// Cosine momentum schedule rising from `mu0` at `t = 0` to 1 at `t = total`.
pub fn ema_momentum(t: usize, total: usize, mu0: f64) -> Result<f64> {
    if t > total {
        return Err(AclipError::Argument(format!("step {t} beyond schedule of {total}")));
    }
    if !(0.0..=1.0).contains(&mu0) {
        return Err(AclipError::Argument(format!("base momentum {mu0} outside [0, 1]")));
    }
    if total == 0 {
        return Ok(mu0);
    }
    let phase = std::f64::consts::PI * t as f64 / total as f64;
    Ok(1.0 - (1.0 - mu0) * (phase.cos() + 1.0) / 2.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmaState {
    /// Shadow parameters. Never bound as gradient leaves.
    pub shadow: ParamSet,
    pub base_momentum: f64,
    pub step: usize,
    pub total_steps: usize,
}

impl EmaState {
    /// Shadows the entries of `online` whose names start with one of `prefixes`.
    pub fn new(online: &ParamSet, prefixes: &[&str], base_momentum: f64, total_steps: usize) -> Self {
        Self {
            shadow: online.subset(prefixes),
            base_momentum,
            step: 0,
            total_steps,
        }
    }

    pub fn momentum(&self) -> Result<f64> {
        ema_momentum(self.step, self.total_steps, self.base_momentum)
    }

    /// `shadow <- mu shadow + (1 - mu) online` with `mu = mu(step)`, then
    /// advances the step. Returns the momentum used.
    pub fn update(&mut self, online: &ParamSet) -> Result<f64> {
        let mu = self.momentum()?;
        blend(&mut self.shadow, online, mu)?;
        self.step += 1;
        Ok(mu)
    }
}

/// In-place `shadow <- mu shadow + (1 - mu) online` over the shadow's names.
/// `mu = 1` leaves the shadow untouched and `mu = 0` copies, both bit-exact.
pub fn blend(shadow: &mut ParamSet, online: &ParamSet, mu: f64) -> Result<()> {
    for (name, p) in shadow.iter() {
        let src = online.get(name)?;
        if src.shape() != p.value.shape() {
            return Err(AclipError::Structural(format!(
                "{name}: shadow {:?} vs online {:?}",
                p.value.shape(),
                src.shape()
            )));
        }
    }
    if mu == 1.0 {
        return Ok(());
    }
    for (name, p) in shadow.iter_mut() {
        let src = online.get(name)?;
        if mu == 0.0 {
            p.value = src.clone();
            continue;
        }
        for (s, &o) in p.value.data_mut().iter_mut().zip(src.data()) {
            *s = mu * *s + (1.0 - mu) * o;
        }
    }
    Ok(())
}
