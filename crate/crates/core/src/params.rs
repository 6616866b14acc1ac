//! Named parameter storage shared by the model, optimizer and checkpoints.

use std::collections::HashMap;

use indexmap::IndexMap;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    /// Whether weight decay applies to this tensor.
    pub decay: bool,
}

/// Ordered map of parameter tensors. Insertion order is the serialization order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, decay: bool) {
        self.entries.insert(name.into(), Param { value, decay });
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Number of tensors.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of learnable scalars across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            decay: p.decay,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn map_values(&mut self, f: impl Fn(T) -> T) {
        for p in self.entries.values_mut() {
            for v in p.value.data_mut() {
                *v = f(*v);
            }
        }
    }
}

/// Uniform fan-in scaled initialisation, `U(-√(6/fan_in), √(6/fan_in))`.
pub fn fan_in_uniform<T: Scalar>(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..bound)))
}

/// Binds store entries into one graph, creating each leaf at most once.
pub struct Binder<'p, T> {
    store: &'p ParamStore<T>,
    vars: HashMap<String, Var>,
    order: Vec<String>,
    trainable: bool,
}

impl<'p, T: Scalar> Binder<'p, T> {
    /// `trainable = false` binds parameters as constants (evaluation only).
    pub fn new(store: &'p ParamStore<T>, trainable: bool) -> Self {
        Binder {
            store,
            vars: HashMap::new(),
            order: Vec::new(),
            trainable,
        }
    }

    pub fn var(&mut self, graph: &mut Graph<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let value = self.store.get(name)?.clone();
        let v = if self.trainable {
            graph.param(value)
        } else {
            graph.constant(value)
        };
        self.vars.insert(name.to_string(), v);
        self.order.push(name.to_string());
        Ok(v)
    }

    /// Binds `name` to a leaf the caller already created.
    pub fn preset(&mut self, name: &str, var: Var) {
        if self.vars.insert(name.to_string(), var).is_none() {
            self.order.push(name.to_string());
        }
    }

    pub fn bound(&self) -> impl Iterator<Item = (&str, Var)> {
        self.order.iter().map(|n| (n.as_str(), self.vars[n]))
    }

    /// Gradients for every bound parameter after `graph.backward`. Parameters
    /// unreachable from the loss receive zeros.
    pub fn gradients(&self, graph: &Graph<T>) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (name, p) in self.store.iter() {
            let g = self
                .vars
                .get(name)
                .and_then(|&v| graph.grad(v).cloned())
                .unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec()));
            out.insert(name, g, p.decay);
        }
        out
    }
}
