//! Named parameter and buffer storage for every trainable component.
//!
//! Model structs (backbone blocks, fusion modules, discriminators, SSL heads)
//! are lightweight wiring descriptions; the values live here, keyed by dotted
//! path (`det.stage0.rgb.conv.w`, `disc.p3.l1.b`, …). The [`BTreeMap`] keeps
//! iteration order stable, so optimizers that match state to parameters by
//! position see the same list on every step, and checkpoints enumerate
//! tensors deterministically.
//!
//! Parameters are gradient-tracked tensors; buffers (batchnorm running
//! statistics) are plain float vectors behind per-entry [`RefCell`]s so a
//! training forward pass can update them through a shared reference.

use std::cell::RefCell;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Central registry of trainable tensors and non-trainable state vectors.
pub struct ParamStore<S: Scalar> {
    params: BTreeMap<String, Tensor<S>>,
    buffers: BTreeMap<String, RefCell<Vec<S>>>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { params: BTreeMap::new(), buffers: BTreeMap::new() }
    }

    /// Register a trainable tensor. Names must be unique across the store.
    pub fn insert_param(&mut self, name: &str, tensor: Tensor<S>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::arg("param_store", format!("duplicate parameter `{name}`")));
        }
        tensor.set_requires_grad(true);
        self.params.insert(name.to_string(), tensor);
        Ok(())
    }

    /// Register a non-trainable state vector (e.g. batchnorm running stats).
    pub fn insert_buffer(&mut self, name: &str, data: Vec<S>) -> Result<()> {
        if self.buffers.contains_key(name) {
            return Err(Error::arg("param_store", format!("duplicate buffer `{name}`")));
        }
        self.buffers.insert(name.to_string(), RefCell::new(data));
        Ok(())
    }

    pub fn param(&self, name: &str) -> Result<&Tensor<S>> {
        self.params.get(name).ok_or_else(|| Error::arg("param_store", format!("unknown parameter `{name}`")))
    }

    pub fn buffer(&self, name: &str) -> Result<&RefCell<Vec<S>>> {
        self.buffers.get(name).ok_or_else(|| Error::arg("param_store", format!("unknown buffer `{name}`")))
    }

    /// All parameters in name order.
    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.params.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// All buffers in name order.
    pub fn buffers(&self) -> impl Iterator<Item = (&str, &RefCell<Vec<S>>)> {
        self.buffers.iter().map(|(n, b)| (n.as_str(), b))
    }

    /// Parameter tensors whose dotted name starts with `prefix`, in name
    /// order — the unit optimizers update (detector vs discriminators vs SSL
    /// heads are disjoint prefixes).
    pub fn tensors_with_prefix(&self, prefix: &str) -> Vec<Tensor<S>> {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.clone())
            .collect()
    }

    /// Flip gradient tracking for every parameter under `prefix`. Freezing a
    /// component this way makes a backward pass treat it as a constant, which
    /// is how update partitions (detector step vs discriminator step) are
    /// enforced structurally rather than by convention.
    pub fn set_trainable(&self, prefix: &str, trainable: bool) {
        for (name, t) in &self.params {
            if name.starts_with(prefix) {
                t.set_requires_grad(trainable);
            }
        }
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Name → shape listing, for structural comparisons.
    pub fn shapes(&self) -> BTreeMap<String, Vec<usize>> {
        self.params.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect()
    }

    /// Copy the store into another element type (f32 training weights into an
    /// f64 store for numeric checks). Gradients are not carried over.
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        let params = self.params.iter().map(|(n, t)| (n.clone(), t.cast::<T>().requiring_grad())).collect();
        let buffers = self
            .buffers
            .iter()
            .map(|(n, b)| {
                let data = b.borrow().iter().map(|&v| T::from_f64c(v.to_f64c())).collect();
                (n.clone(), RefCell::new(data))
            })
            .collect();
        ParamStore { params, buffers }
    }

    /// Overwrite a parameter's values (shape must match).
    pub fn set_param_data(&self, name: &str, values: &[S]) -> Result<()> {
        self.param(name)?.set_data(values)
    }
}

/// Everything a module needs to run its forward pass: the tape recording the
/// step, the store holding its weights, and the batchnorm mode.
pub struct Fwd<'a, S: Scalar> {
    pub tape: &'a crate::tensor::Tape<S>,
    pub store: &'a ParamStore<S>,
    /// Training mode: batchnorm normalizes with batch moments and folds them
    /// into the running statistics. Eval mode uses the frozen statistics.
    pub train: bool,
}
