//! In-place optimizers. Parameters are matched to their state slots by
//! position, so callers must pass the same parameter list in the same order on
//! every step. A parameter without a gradient is an error, not a silent skip.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Clear the gradients of every parameter in the list.
pub fn zero_grads<S: Scalar>(params: &[Tensor<S>]) {
    for p in params {
        p.zero_grad();
    }
}

/// Stochastic gradient descent with classical momentum:
/// `v ← μ·v + g`, `p ← p − lr·v`.
pub struct Sgd<S: Scalar> {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<S>>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd { lr, momentum, velocity: Vec::new() }
    }

    pub fn step(&mut self, params: &[Tensor<S>]) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![S::zero(); p.numel()]).collect();
        }
        let lr = S::from_f64c(self.lr);
        let mu = S::from_f64c(self.momentum);
        for (i, p) in params.iter().enumerate() {
            let v = &mut self.velocity[i];
            p.with_data_and_grad(|data, grad| {
                for ((d, v), &g) in data.iter_mut().zip(v.iter_mut()).zip(grad) {
                    *v = mu * *v + g;
                    *d -= lr * *v;
                }
            })
            .map_err(|_| Error::MissingGrad { index: i, numel: p.numel() })?;
        }
        Ok(())
    }
}

/// Adam with bias correction (no weight decay).
pub struct Adam<S: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { lr, beta1, beta2, eps, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Adam with the usual β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn with_defaults(lr: f64) -> Self {
        Self::new(lr, 0.9, 0.999, 1e-8)
    }

    pub fn step(&mut self, params: &[Tensor<S>]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![S::zero(); p.numel()]).collect();
            self.v = params.iter().map(|p| vec![S::zero(); p.numel()]).collect();
        }
        self.t += 1;
        let b1 = S::from_f64c(self.beta1);
        let b2 = S::from_f64c(self.beta2);
        let one = S::one();
        let corr1 = S::from_f64c(1.0 - self.beta1.powi(self.t as i32));
        let corr2 = S::from_f64c(1.0 - self.beta2.powi(self.t as i32));
        let lr = S::from_f64c(self.lr);
        let eps = S::from_f64c(self.eps);
        for (i, p) in params.iter().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            p.with_data_and_grad(|data, grad| {
                for (j, (d, &g)) in data.iter_mut().zip(grad).enumerate() {
                    m[j] = b1 * m[j] + (one - b1) * g;
                    v[j] = b2 * v[j] + (one - b2) * g * g;
                    let mhat = m[j] / corr1;
                    let vhat = v[j] / corr2;
                    *d -= lr * mhat / (vhat.sqrt() + eps);
                }
            })
            .map_err(|_| Error::MissingGrad { index: i, numel: p.numel() })?;
        }
        Ok(())
    }
}
