//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] is rebuilt for every training step. Parameters enter the tape
//! as leaves tagged with a [`ParamId`], and [`Tape::backward`] returns a
//! [`GradientMap`] keyed by those ids. Elementwise primitives only broadcast
//! a one-element operand against a tensor.

mod tape;
mod tensor;

use std::collections::BTreeMap;

pub use tape::{Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Identifier of a trainable parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Gradients keyed by parameter id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientMap {
    grads: BTreeMap<ParamId, Tensor>,
}

impl GradientMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: ParamId, grad: Tensor) {
        self.grads.insert(id, grad);
    }

    /// Adds `grad` into the entry for `id`, creating it if absent.
    pub fn accumulate(&mut self, id: ParamId, grad: Tensor) {
        match self.grads.get_mut(&id) {
            Some(existing) => existing.axpy(1.0, &grad),
            None => {
                self.grads.insert(id, grad);
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Tensor> {
        self.grads.get_mut(&id)
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.grads.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.grads.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Tensor)> {
        self.grads.iter_mut().map(|(k, v)| (*k, v))
    }

    /// Keeps only the given ids.
    pub fn restrict(&self, ids: &[ParamId]) -> Result<GradientMap> {
        let mut out = GradientMap::new();
        for &id in ids {
            let g = self.get(id).ok_or(Error::UnknownParam(id))?;
            out.insert(id, g.clone());
        }
        Ok(out)
    }

    pub fn scale(&mut self, factor: f64) {
        self.grads.values_mut().for_each(|g| g.scale_in_place(factor));
    }

    /// `self += factor * other` over the ids of `other`.
    pub fn add_scaled(&mut self, factor: f64, other: &GradientMap) {
        for (id, g) in other.iter() {
            match self.grads.get_mut(&id) {
                Some(existing) => existing.axpy(factor, g),
                None => {
                    let mut t = g.clone();
                    t.scale_in_place(factor);
                    self.grads.insert(id, t);
                }
            }
        }
    }

    /// Inner product over the ids present in both maps.
    pub fn dot(&self, other: &GradientMap) -> f64 {
        self.iter()
            .filter_map(|(id, g)| other.get(id).map(|h| g.dot(h)))
            .sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.grads.values().map(Tensor::squared_norm).sum()
    }

    /// Euclidean norm over every entry.
    pub fn norm(&self) -> f64 {
        self.squared_norm().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.values().all(Tensor::all_finite)
    }
}

/// Euclidean norm of the concatenation of the selected gradients.
pub fn global_grad_norm(grads: &GradientMap, subset: &[ParamId]) -> Result<f64> {
    let mut sq = 0.0;
    for &id in subset {
        sq += grads.get(id).ok_or(Error::UnknownParam(id))?.squared_norm();
    }
    Ok(sq.sqrt())
}
