//! Named parameter trees and their binding onto a tape.
//!
//! Names are slash-delimited module paths such as
//! `encoder/spatial/block0/attn/wq`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries.get(name).ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.entries.remove(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Entries whose name starts with `prefix`, with the prefix kept.
    pub fn subtree(&self, prefix: &str) -> ParamStore {
        let entries = self
            .entries
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        ParamStore { entries }
    }

    /// Merges `other` in, overwriting on name collisions.
    pub fn extend(&mut self, other: ParamStore) {
        self.entries.extend(other.entries);
    }

    /// Lists every difference in names or shapes against `other`.
    pub fn structural_diff(&self, other: &ParamStore) -> Vec<String> {
        let mut diff = Vec::new();
        for (k, v) in &self.entries {
            match other.entries.get(k) {
                None => diff.push(format!("- {k} {:?}", v.shape())),
                Some(o) if o.shape() != v.shape() => diff.push(format!("~ {k} {:?} vs {:?}", v.shape(), o.shape())),
                _ => {}
            }
        }
        for (k, v) in &other.entries {
            if !self.entries.contains_key(k) {
                diff.push(format!("+ {k} {:?}", v.shape()));
            }
        }
        diff
    }
}

/// Lazily places parameters from a store onto a graph as leaves.
///
/// A frozen binding creates constant leaves; its parameters never receive
/// gradient.
#[derive(Debug)]
pub struct Binding<'a> {
    params: &'a ParamStore,
    trainable: bool,
    vars: BTreeMap<String, Var>,
}

impl<'a> Binding<'a> {
    pub fn trainable(params: &'a ParamStore) -> Self {
        Self { params, trainable: true, vars: BTreeMap::new() }
    }

    pub fn frozen(params: &'a ParamStore) -> Self {
        Self { params, trainable: false, vars: BTreeMap::new() }
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn store(&self) -> &ParamStore {
        self.params
    }

    pub fn get(&mut self, g: &mut Graph, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let value = self.params.get(name)?.clone();
        let v = g.leaf(value, self.trainable);
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bound(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Gradients for every bound parameter, keyed by name. Parameters that
    /// exist in the store but were never touched get zeros.
    pub fn collect_grads(&self, grads: &Gradients) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, value) in self.params.iter() {
            let g = self
                .vars
                .get(name)
                .and_then(|v| grads.get(*v).cloned())
                .unwrap_or_else(|| Tensor::zeros(value.shape().to_vec()));
            out.insert(name.clone(), g);
        }
        out
    }
}
