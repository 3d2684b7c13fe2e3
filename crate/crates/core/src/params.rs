//! Named parameter collections and their binding onto a graph.

use indexmap::IndexMap;
use ndgrad::{Graph, Tensor, Var};

use crate::error::{AclipError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    /// Receives gradients and optimizer updates.
    pub trainable: bool,
    /// Subject to decoupled weight decay.
    pub decay: bool,
}

/// Ordered map from parameter name to tensor. Order is insertion order and
/// is part of the checkpoint layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: IndexMap<String, Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool, decay: bool) {
        self.entries.insert(
            name.into(),
            Param {
                value,
                trainable,
                decay,
            },
        );
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| AclipError::Structural(format!("missing parameter {name}")))
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| AclipError::Structural(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Total element count.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    /// Entries whose names start with any of `prefixes`, in order.
    pub fn subset(&self, prefixes: &[&str]) -> ParamSet {
        let entries = self
            .entries
            .iter()
            .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        ParamSet { entries }
    }

    /// Same names, same shapes, all zeros.
    pub fn zeros_like(&self) -> ParamSet {
        let entries = self
            .entries
            .iter()
            .map(|(k, v)| {
                let p = Param {
                    value: Tensor::zeros(v.value.shape()),
                    ..v.clone()
                };
                (k.clone(), p)
            })
            .collect();
        ParamSet { entries }
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((ka, a), (kb, b))| ka == kb && a.value.shape() == b.value.shape())
    }

    /// Places every tensor on `g`. Trainable entries become gradient leaves
    /// unless `frozen` is set; everything else is a constant.
    pub fn bind(&self, g: &mut Graph, frozen: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(k, p)| {
                let v = if p.trainable && !frozen {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }
}

/// Parameter name to graph variable.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| AclipError::Structural(format!("parameter {name} not bound")))
    }

    /// Merges another binding; later entries win on name collisions.
    pub fn extend(&mut self, other: Bound) {
        self.vars.extend(other.vars);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl FromIterator<(String, Var)> for Bound {
    fn from_iter<I: IntoIterator<Item = (String, Var)>>(iter: I) -> Self {
        Self {
            vars: iter.into_iter().collect(),
        }
    }
}
