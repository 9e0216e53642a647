use std::collections::HashMap;

use indexmap::IndexMap;

use super::tape::{Gradients, Mode, Tape, Var};
use crate::error::Result;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{ConvSpec, Tensor};

/// A forward pass over a [`ParamStore`]: parameters are bound to tape
/// leaves on first use, and batch-norm running-stat updates are collected
/// for the caller to commit.
pub struct Session<'a, T> {
    pub tape: Tape<T>,
    store: &'a ParamStore<T>,
    mode: Mode,
    bound: HashMap<String, Var>,
    order: Vec<String>,
    updates: Vec<(String, Tensor<T>)>,
}

impl<'a, T: Scalar> Session<'a, T> {
    pub fn new(store: &'a ParamStore<T>, mode: Mode) -> Self {
        Self {
            tape: Tape::new(),
            store,
            mode,
            bound: HashMap::new(),
            order: Vec::new(),
            updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    /// Tape leaf for parameter `name`; trainable parameters require grad.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let p = self.store.param(name)?;
        let v = self.tape.leaf(p.tensor.clone(), p.trainable);
        self.bound.insert(name.to_string(), v);
        self.order.push(name.to_string());
        Ok(v)
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.tape.constant(value)
    }

    /// Convolution with `{prefix}.weight` and, when registered, `{prefix}.bias`.
    pub fn conv(&mut self, x: Var, prefix: &str, spec: ConvSpec) -> Result<Var> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let bias_name = format!("{prefix}.bias");
        let b = if self.store.contains(&bias_name) { Some(self.param(&bias_name)?) } else { None };
        self.tape.conv2d(x, w, b, spec)
    }

    /// Batch norm `{prefix}` in the session's mode.
    pub fn batch_norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.weight"))?;
        let beta = self.param(&format!("{prefix}.bias"))?;
        let mean_name = format!("{prefix}.running_mean");
        let var_name = format!("{prefix}.running_var");
        let (y, updated) = self.tape.batch_norm(
            x,
            gamma,
            beta,
            self.store.get(&mean_name)?,
            self.store.get(&var_name)?,
            self.mode,
        )?;
        if let Some((mean, var)) = updated {
            self.updates.push((mean_name, mean));
            self.updates.push((var_name, var));
        }
        Ok(y)
    }

    /// Gradients of every bound trainable parameter, in binding order.
    /// Parameters the loss does not depend on get zeros.
    pub fn param_grads(&self, grads: &Gradients<T>) -> IndexMap<String, Tensor<T>> {
        self.order
            .iter()
            .filter(|name| self.store.param(name).map(|p| p.trainable).unwrap_or(false))
            .map(|name| {
                let v = self.bound[name];
                (name.clone(), grads.get_or_zeros(v, self.tape.dims(v)))
            })
            .collect()
    }

    /// Running-statistic updates recorded in train mode.
    pub fn into_updates(self) -> Vec<(String, Tensor<T>)> {
        self.updates
    }
}
