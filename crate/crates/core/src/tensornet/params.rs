use indexmap::IndexMap;

use super::{Real, Tensor};
use crate::{Error, Result};

/// Named parameter tensors in insertion (layer) order, e.g. `enc.0.block0.conv1.weight`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<F> {
    map: IndexMap<String, Tensor<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self { map: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<F>) {
        self.map.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.map.get_mut(name)
    }

    /// Like [`get`](Self::get) but a missing entry is a weights error.
    pub fn require(&self, name: &str) -> Result<&Tensor<F>> {
        self.map
            .get(name)
            .ok_or_else(|| Error::Weights(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<F>)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total scalar count.
    pub fn num_values(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            map: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// `self[name] += other` for a parameter present in `self`.
    pub fn accumulate(&mut self, name: &str, other: &Tensor<F>) -> Result<()> {
        self.map
            .get_mut(name)
            .ok_or_else(|| Error::Weights(format!("missing parameter {name}")))?
            .add_assign(other)
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            map: self.map.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

/// Layer part of a parameter name: everything before the last `.`.
pub fn layer_of(param: &str) -> &str {
    param.rsplit_once('.').map_or(param, |(layer, _)| layer)
}
