use std::collections::BTreeMap;

use super::{Gradients, Tape, Tensor};
use crate::error::{Error, Result};

/// A named parameter: value, accumulated gradient, and whether the
/// optimizer may update it.
#[derive(Clone, Debug)]
pub struct Variable {
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
    has_grad: bool,
}

impl Variable {
    pub fn new(value: Tensor, trainable: bool) -> Self {
        let grad = Tensor::zeros_like(&value);
        Variable { value, grad, trainable, has_grad: false }
    }

    /// Whether a gradient was accumulated since the last reset.
    pub fn has_grad(&self) -> bool {
        self.has_grad
    }

    pub fn set_grad(&mut self, grad: Tensor) -> Result<()> {
        if grad.shape() != self.value.shape() {
            return Err(Error::ShapeMismatch(format!(
                "gradient {} for value {}",
                grad.shape(),
                self.value.shape()
            )));
        }
        self.grad = grad;
        self.has_grad = true;
        Ok(())
    }

    pub fn reset_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
        self.has_grad = false;
    }
}

/// Parameters keyed by a stable dotted path, iterated in sorted order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    vars: BTreeMap<String, Variable>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.vars.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        self.vars.insert(name, Variable::new(value, trainable));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Variable> {
        self.vars.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Variable> {
        self.vars.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.vars
            .get(name)
            .map(|v| &v.value)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Variable)> {
        self.vars.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Variable)> {
        self.vars.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Total scalar count of all parameters.
    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.value.numel()).sum()
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn num_scalars_under(&self, prefix: &str) -> usize {
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.value.numel())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        self.vars.values_mut().for_each(Variable::reset_grad);
    }

    /// Adds the gradients of every parameter bound on `tape` into its
    /// `grad` slot.
    pub fn accumulate(&mut self, tape: &Tape, grads: &Gradients) -> Result<()> {
        for (name, var) in tape.bindings() {
            let slot = self
                .vars
                .get_mut(name)
                .ok_or_else(|| Error::InvalidArgument(format!("tape binds unknown parameter `{name}`")))?;
            if let Some(g) = grads.get(*var) {
                for (a, b) in slot.grad.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
                slot.has_grad = true;
            }
        }
        Ok(())
    }

    /// Copies values (not gradients) from `other`; names and shapes must agree.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, var) in &mut self.vars {
            let src = other.value(name)?;
            if src.shape() != var.value.shape() {
                return Err(Error::ShapeMismatch(format!("parameter `{name}`")));
            }
            var.value = src.clone();
        }
        Ok(())
    }
}
