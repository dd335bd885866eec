use indexmap::IndexMap;

use super::{ExprGraph, Gradients, Scalar, Tensor, Var};
use crate::error::{Error, Result};

/// Position of a parameter inside its [`ParameterSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameters in insertion order.
///
/// Iteration order is the insertion order, which is what checkpoints and
/// optimizer state rely on.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<T> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParameterSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        ParameterSet {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        let (idx, _) = self.entries.insert_full(name, value);
        Ok(ParamId(idx))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.entries
            .get_index_of(name)
            .map(ParamId)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries.get_index(id.0).map(|(k, _)| k.as_str()).unwrap_or("")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Same names and shapes, in the same order.
    pub fn same_layout(&self, other: &ParameterSet<T>) -> bool {
        self.len() == other.len()
            && self
                .iter()
                .zip(other.iter())
                .all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape() == t2.shape())
    }

    /// Concatenates several sets, prefixing each name.
    pub fn merged<'a>(parts: impl IntoIterator<Item = (&'a str, &'a ParameterSet<T>)>) -> Result<Self> {
        let mut out = ParameterSet::new();
        for (prefix, set) in parts {
            for (name, t) in set.iter() {
                out.insert(format!("{prefix}{name}"), t.clone())?;
            }
        }
        Ok(out)
    }

    /// Entries whose name starts with `prefix`, with the prefix stripped.
    pub fn with_prefix(&self, prefix: &str) -> Self {
        let mut out = ParameterSet::new();
        for (name, t) in self.iter() {
            if let Some(rest) = name.strip_prefix(prefix) {
                out.entries.insert(rest.to_string(), t.clone());
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            entries: self.iter().map(|(k, v)| (k.to_string(), v.cast())).collect(),
        }
    }

    /// Adds every parameter to `graph` as a leaf; `trainable` decides, per
    /// name, whether the leaf receives a gradient.
    pub fn bind(&self, graph: &mut ExprGraph<T>, trainable: impl Fn(&str) -> bool) -> Binding {
        let vars = self
            .iter()
            .map(|(name, t)| graph.leaf(t.clone(), trainable(name)))
            .collect();
        Binding { vars }
    }
}

/// Graph leaves for one [`ParameterSet`], aligned by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Pulls this set's gradients out of a backward pass.
    pub fn grads<T: Scalar>(&self, graph: &ExprGraph<T>, grads: &Gradients<T>) -> GradSet<T> {
        GradSet {
            grads: self
                .vars
                .iter()
                .map(|&v| {
                    if graph.needs_grad(v) {
                        Some(grads.get_or_zeros(v))
                    } else {
                        None
                    }
                })
                .collect(),
        }
    }
}

/// Per-parameter gradients; `None` marks a frozen parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct GradSet<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> GradSet<T> {
    pub fn new(grads: Vec<Option<Tensor<T>>>) -> Self {
        GradSet { grads }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Option<&Tensor<T>>> {
        self.grads.iter().map(Option::as_ref)
    }

    /// True when every present gradient is exactly zero.
    pub fn all_zero(&self) -> bool {
        self.grads
            .iter()
            .flatten()
            .all(|g| g.data().iter().all(|v| *v == T::zero()))
    }
}
