//! Named parameter storage and per-forward binding to graph leaves.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor, Var};

/// Handle to one tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, uniquely named tensors. Insertion order is the serialization
/// and optimizer order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S: Scalar> {
    names: Vec<String>,
    values: Vec<Tensor<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter name {name}")));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(id))
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::zeros(shape.to_vec()))
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::ones(shape.to_vec()))
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn fan_in(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Result<ParamId> {
        let b = 1.0 / (fan_in.max(1) as f64).sqrt();
        self.add(name, Tensor::uniform(shape.to_vec(), -b, b, rng))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<S>> {
        self.id(name).map(|id| self.get(id))
    }

    /// Replaces a tensor, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<S>) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::shape(
                "param_set",
                format!("{}: {:?} vs {:?}", self.names[id.0], value.shape(), self.values[id.0].shape()),
            ));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total scalar count.
    pub fn scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Whether both stores hold the same names, shapes, and bits.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.names == other.names && self.values.iter().zip(&other.values).all(|(a, b)| a.bit_eq(b))
    }
}

/// The store's tensors as graph leaves for one forward pass.
pub struct Bound<S: Scalar> {
    vars: Vec<Var<S>>,
}

impl<S: Scalar> Bound<S> {
    /// Leaves that collect gradients.
    pub fn trainable(store: &ParamStore<S>) -> Self {
        Self { vars: store.values.iter().cloned().map(Var::param).collect() }
    }

    /// Leaves excluded from differentiation (inference).
    pub fn frozen(store: &ParamStore<S>) -> Self {
        Self { vars: store.values.iter().cloned().map(Var::constant).collect() }
    }

    /// Uses caller-made leaves, one per store entry in store order.
    pub fn from_vars(vars: Vec<Var<S>>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> &Var<S> {
        &self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<S>] {
        &self.vars
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_ordered() {
        let mut st = ParamStore::<f32>::new();
        let a = st.zeros("a", &[2, 3]).unwrap();
        let b = st.ones("b", &[4]).unwrap();
        assert!(st.zeros("a", &[1]).is_err());
        assert_eq!(st.scalars(), 10);
        assert_eq!(st.id("b"), Some(b));
        assert_eq!(st.name(a), "a");
        assert!(st.set(a, Tensor::zeros([3, 2])).is_err());
        let names: Vec<&str> = st.iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["a", "b"]);
    }
}
