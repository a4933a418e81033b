use std::collections::BTreeMap;

use crate::numerics::{Tape, Tensor, Var};
use crate::Scalar;

/// One named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub value: Tensor<S>,
    /// Whether decoupled weight decay applies.
    pub decay: bool,
    pub trainable: bool,
}

/// Ordered collection of named parameters.
///
/// Insertion order is the canonical order used by the optimizer, the
/// checkpoint writer and gradient checks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<S> {
    entries: Vec<Param<S>>,
    index: BTreeMap<String, usize>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    /// Adds or replaces a parameter.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<S>, decay: bool) {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.entries[i].value = value;
            self.entries[i].decay = decay;
            return;
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Param {
            name,
            value,
            decay,
            trainable: true,
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.index.get(name).map(|&i| &self.entries[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.index.get(name).map(|&i| &mut self.entries[i].value)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) {
        if let Some(&i) = self.index.get(name) {
            self.entries[i].trainable = trainable;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<S>> {
        self.entries.iter_mut()
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    /// Records every parameter on `tape`: trainable entries as differentiable
    /// leaves, frozen ones as constants.
    pub fn bind(&self, tape: &mut Tape<S>) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|p| {
                if p.trainable {
                    tape.param(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect();
        BoundParams {
            vars,
            index: self.index.clone(),
        }
    }
}

/// Tape handles for a [`ParamSet`], in the same order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
    index: BTreeMap<String, usize>,
}

impl BoundParams {
    /// Handle for `name`. Panics on unknown names: parameter names are fixed
    /// by the model layout, so a miss is a programming error.
    pub fn var(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("unknown parameter {name:?}"),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
