//! The Wengert tape: records every differentiable operation executed through
//! it and replays them in reverse to accumulate gradients.

use std::cell::RefCell;
use std::collections::HashMap;

use super::bcast::{broadcast_strides, zip_broadcast};
use super::kernels::{conv2d_backward, matmul_acc, matmul_ta_acc, ConvDims};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// One recorded operation. `inputs` keep the upstream tensors alive; the op
/// variant carries whatever forward state the backward formula needs.
pub(super) struct Node<S: Scalar> {
    pub inputs: Vec<Tensor<S>>,
    pub output: Tensor<S>,
    pub op: BackOp<S>,
}

/// Backward rules, one variant per primitive.
pub(super) enum BackOp<S: Scalar> {
    /// Elementwise binary with broadcasting; `kind` selects +, −, ×.
    Binary { kind: BinaryKind },
    /// `out = m·x + c`.
    AffineScalar { m: S },
    Square,
    Exp,
    Sigmoid,
    Relu,
    LeakyRelu { slope: S },
    Sum,
    Mean,
    /// Mean over axis 0.
    MeanBatch,
    /// Mean over all dimensions after the second: `[N,C,...] -> [N,C]`.
    MeanSpatial,
    /// Channel concatenation (axis 1); `splits` are the input channel counts.
    ConcatC { splits: Vec<usize> },
    /// Channel slice (axis 1).
    NarrowC { start: usize },
    /// Shape change preserving element order; backward is the identity.
    Reshape,
    Conv2d { dims: ConvDims, batch: usize, cols: Vec<S> },
    Linear,
    BatchNormTrain { mean: Vec<S>, inv_std: Vec<S> },
    BatchNormEval { mean: Vec<S>, inv_std: Vec<S> },
    MaxPool { argmax: Vec<u32> },
    Upsample { factor: usize },
    BceWithLogits,
    /// Fused softmax + cross-entropy over cells; `probs` is cell-major
    /// `[cells × classes]`, `weight_over_wsum[cell]` is the cell's weight
    /// divided by the weight sum (uniform mean when no weights were given).
    SoftmaxCe { probs: Vec<S>, labels: Vec<u32>, weight_over_wsum: Vec<S>, classes: usize },
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub(super) enum BinaryKind {
    Add,
    Sub,
    Mul,
}

/// Operation recorder. Create one per optimization step, run the forward
/// graph through it, call [`backward`](Tape::backward), drop it.
///
/// An inference tape ([`Tape::inference`]) executes the same operations
/// without recording anything; outputs come back with `requires_grad == false`.
pub struct Tape<S: Scalar> {
    pub(super) nodes: RefCell<Vec<Node<S>>>,
    pub(super) grad_enabled: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), grad_enabled: true }
    }

    pub fn inference() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), grad_enabled: false }
    }

    pub fn is_recording(&self) -> bool {
        self.grad_enabled
    }

    pub fn node_count(&self) -> usize {
        self.nodes.borrow().len()
    }

    /// Finish constructing an op: decide whether the output participates in
    /// differentiation, and if so record the node.
    pub(super) fn emit(&self, inputs: Vec<Tensor<S>>, output: Tensor<S>, op: impl FnOnce() -> BackOp<S>) -> Tensor<S> {
        if self.grad_enabled && inputs.iter().any(Tensor::requires_grad) {
            output.set_requires_grad(true);
            self.nodes.borrow_mut().push(Node { inputs, output: output.clone(), op: op() });
        }
        output
    }

    /// Reverse sweep from a scalar loss. Gradients of every tensor reachable
    /// from `loss` with `requires_grad` are accumulated into their persistent
    /// buffers; repeated calls without zeroing keep accumulating.
    pub fn backward(&self, loss: &Tensor<S>) -> Result<()> {
        if loss.numel() != 1 {
            return Err(Error::NonScalarLoss(loss.shape().to_vec()));
        }
        // Per-call transient gradients, keyed by tensor id. Keeping them out
        // of the persistent buffers makes a second backward call see fresh
        // seed values rather than its own partial sums.
        let mut transient: HashMap<u64, Vec<S>> = HashMap::new();
        let mut leaves: Vec<Tensor<S>> = Vec::new();
        transient.insert(loss.id(), vec![S::one()]);

        let nodes = self.nodes.borrow();
        for node in nodes.iter().rev() {
            // All consumers of this output appear later on the tape, so by the
            // time we reach the producer its transient gradient is complete.
            let Some(gout) = transient.remove(&node.output.id()) else {
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(Tensor::requires_grad).collect();
            let grads = node.op.backward(&node.inputs, &node.output, &gout, &needs);
            debug_assert_eq!(grads.len(), node.inputs.len());
            for (input, grad) in node.inputs.iter().zip(grads) {
                let Some(grad) = grad else { continue };
                debug_assert_eq!(grad.len(), input.numel());
                match transient.get_mut(&input.id()) {
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grad) {
                            *a += *g;
                        }
                    }
                    None => {
                        transient.insert(input.id(), grad);
                        leaves.push(input.clone());
                    }
                }
            }
            if node.output.requires_grad() {
                node.output.accumulate_grad(&gout);
            }
        }
        // Whatever is still in the map was never produced on this tape:
        // parameters, inputs, or outputs of other tapes.
        for t in leaves {
            if let Some(g) = transient.remove(&t.id()) {
                if t.requires_grad() {
                    t.accumulate_grad(&g);
                }
            }
        }
        if loss.requires_grad() {
            if let Some(g) = transient.remove(&loss.id()) {
                loss.accumulate_grad(&g);
            }
        }
        Ok(())
    }
}

impl<S: Scalar> BackOp<S> {
    /// Compute per-input gradients. `needs[i] == false` lets expensive rules
    /// skip inputs that won't use the result (e.g. image batches).
    fn backward(
        &self,
        inputs: &[Tensor<S>],
        output: &Tensor<S>,
        gout: &[S],
        needs: &[bool],
    ) -> Vec<Option<Vec<S>>> {
        match self {
            BackOp::Binary { kind } => binary_backward(*kind, inputs, gout, needs),
            BackOp::AffineScalar { m } => {
                vec![needs[0].then(|| gout.iter().map(|&g| g * *m).collect())]
            }
            BackOp::Square => {
                let x = inputs[0].data();
                let two = S::from_f64c(2.0);
                vec![needs[0].then(|| x.iter().zip(gout).map(|(&x, &g)| two * x * g).collect())]
            }
            BackOp::Exp => {
                let y = output.data();
                vec![needs[0].then(|| y.iter().zip(gout).map(|(&y, &g)| y * g).collect())]
            }
            BackOp::Sigmoid => {
                let y = output.data();
                vec![needs[0].then(|| y.iter().zip(gout).map(|(&y, &g)| y * (S::one() - y) * g).collect())]
            }
            BackOp::Relu => {
                let x = inputs[0].data();
                vec![needs[0].then(|| {
                    x.iter().zip(gout).map(|(&x, &g)| if x > S::zero() { g } else { S::zero() }).collect()
                })]
            }
            BackOp::LeakyRelu { slope } => {
                let x = inputs[0].data();
                vec![needs[0]
                    .then(|| x.iter().zip(gout).map(|(&x, &g)| if x > S::zero() { g } else { g * *slope }).collect())]
            }
            BackOp::Sum => {
                vec![needs[0].then(|| vec![gout[0]; inputs[0].numel()])]
            }
            BackOp::Mean => {
                let scale = S::from_f64c(1.0 / inputs[0].numel() as f64);
                vec![needs[0].then(|| vec![gout[0] * scale; inputs[0].numel()])]
            }
            BackOp::MeanBatch => {
                let shape = inputs[0].shape();
                let n = shape[0];
                let rest = inputs[0].numel() / n.max(1);
                let scale = S::from_f64c(1.0 / n as f64);
                vec![needs[0].then(|| {
                    let mut dx = vec![S::zero(); inputs[0].numel()];
                    for chunk in dx.chunks_exact_mut(rest) {
                        for (d, &g) in chunk.iter_mut().zip(gout) {
                            *d = g * scale;
                        }
                    }
                    dx
                })]
            }
            BackOp::MeanSpatial => {
                let shape = inputs[0].shape();
                let inner: usize = shape[2..].iter().product();
                let scale = S::from_f64c(1.0 / inner as f64);
                vec![needs[0].then(|| {
                    let mut dx = vec![S::zero(); inputs[0].numel()];
                    for (chunk, &g) in dx.chunks_exact_mut(inner).zip(gout) {
                        chunk.fill(g * scale);
                    }
                    dx
                })]
            }
            BackOp::ConcatC { splits } => concat_backward(inputs, output, gout, needs, splits),
            BackOp::NarrowC { start } => {
                let shape = inputs[0].shape();
                let outer = shape[0];
                let c_in = shape[1];
                let inner: usize = shape[2..].iter().product();
                let len = output.shape()[1];
                vec![needs[0].then(|| {
                    let mut dx = vec![S::zero(); inputs[0].numel()];
                    for o in 0..outer {
                        let src = &gout[o * len * inner..(o + 1) * len * inner];
                        let dst = &mut dx[(o * c_in + start) * inner..(o * c_in + start + len) * inner];
                        dst.copy_from_slice(src);
                    }
                    dx
                })]
            }
            BackOp::Reshape => {
                vec![needs[0].then(|| gout.to_vec())]
            }
            BackOp::Conv2d { dims, batch, cols } => {
                let w = inputs[1].data();
                let mut dx = needs[0].then(|| vec![S::zero(); inputs[0].numel()]);
                let mut dw = vec![S::zero(); inputs[1].numel()];
                let mut db = (inputs.len() > 2).then(|| vec![S::zero(); inputs[2].numel()]);
                conv2d_backward(gout, &w, cols, *batch, dims, dx.as_deref_mut(), &mut dw, db.as_deref_mut());
                let mut out = vec![dx, needs[1].then_some(dw)];
                if inputs.len() > 2 {
                    out.push(if needs[2] { db } else { None });
                }
                out
            }
            BackOp::Linear => linear_backward(inputs, gout, needs),
            BackOp::BatchNormTrain { mean, inv_std } => bn_train_backward(inputs, gout, needs, mean, inv_std),
            BackOp::BatchNormEval { mean, inv_std } => bn_eval_backward(inputs, gout, needs, mean, inv_std),
            BackOp::MaxPool { argmax } => {
                vec![needs[0].then(|| {
                    let mut dx = vec![S::zero(); inputs[0].numel()];
                    for (&a, &g) in argmax.iter().zip(gout) {
                        dx[a as usize] += g;
                    }
                    dx
                })]
            }
            BackOp::Upsample { factor } => {
                let f = *factor;
                let shape = inputs[0].shape();
                let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
                vec![needs[0].then(|| {
                    let mut dx = vec![S::zero(); inputs[0].numel()];
                    let (oh, ow) = (h * f, w * f);
                    for p in 0..n * c {
                        let src = &gout[p * oh * ow..(p + 1) * oh * ow];
                        let dst = &mut dx[p * h * w..(p + 1) * h * w];
                        for oy in 0..oh {
                            let row = &src[oy * ow..(oy + 1) * ow];
                            let drow = &mut dst[(oy / f) * w..(oy / f + 1) * w];
                            for (ox, &g) in row.iter().enumerate() {
                                drow[ox / f] += g;
                            }
                        }
                    }
                    dx
                })]
            }
            BackOp::BceWithLogits => {
                let x = inputs[0].data();
                let t = inputs[1].data();
                let dx = needs[0].then(|| {
                    x.iter()
                        .zip(t.iter())
                        .zip(gout)
                        .map(|((&x, &t), &g)| {
                            let sig = S::one() / (S::one() + (-x).exp());
                            (sig - t) * g
                        })
                        .collect()
                });
                vec![dx, None]
            }
            BackOp::SoftmaxCe { probs, labels, weight_over_wsum, classes } => {
                // logits layout [outer, C, inner]; probs cell-major.
                let shape = inputs[0].shape();
                let outer = shape[0];
                let inner: usize = shape[2..].iter().product();
                let g = gout[0];
                vec![needs[0].then(|| {
                    let mut dx = vec![S::zero(); inputs[0].numel()];
                    for cell in 0..outer * inner {
                        let wg = weight_over_wsum[cell] * g;
                        if wg == S::zero() {
                            continue;
                        }
                        let (o, i) = (cell / inner, cell % inner);
                        let p = &probs[cell * classes..(cell + 1) * classes];
                        let label = labels[cell] as usize;
                        for c in 0..*classes {
                            let delta = if c == label { S::one() } else { S::zero() };
                            dx[(o * *classes + c) * inner + i] = (p[c] - delta) * wg;
                        }
                    }
                    dx
                })]
            }
        }
    }
}

fn binary_backward<S: Scalar>(
    kind: BinaryKind,
    inputs: &[Tensor<S>],
    gout: &[S],
    needs: &[bool],
) -> Vec<Option<Vec<S>>> {
    let a = &inputs[0];
    let b = &inputs[1];
    let out_shape = super::bcast::broadcast_shapes("binary", a.shape(), b.shape()).expect("validated at forward");
    let rank = out_shape.len();
    let sa = broadcast_strides(a.shape(), rank);
    let sb = broadcast_strides(b.shape(), rank);
    let mut ga = needs[0].then(|| vec![S::zero(); a.numel()]);
    let mut gb = needs[1].then(|| vec![S::zero(); b.numel()]);
    match kind {
        BinaryKind::Add => {
            zip_broadcast(&out_shape, &sa, &sb, |flat, ia, ib| {
                if let Some(ga) = ga.as_mut() {
                    ga[ia] += gout[flat];
                }
                if let Some(gb) = gb.as_mut() {
                    gb[ib] += gout[flat];
                }
            });
        }
        BinaryKind::Sub => {
            zip_broadcast(&out_shape, &sa, &sb, |flat, ia, ib| {
                if let Some(ga) = ga.as_mut() {
                    ga[ia] += gout[flat];
                }
                if let Some(gb) = gb.as_mut() {
                    gb[ib] -= gout[flat];
                }
            });
        }
        BinaryKind::Mul => {
            let av = a.data();
            let bv = b.data();
            zip_broadcast(&out_shape, &sa, &sb, |flat, ia, ib| {
                if let Some(ga) = ga.as_mut() {
                    ga[ia] += gout[flat] * bv[ib];
                }
                if let Some(gb) = gb.as_mut() {
                    gb[ib] += gout[flat] * av[ia];
                }
            });
        }
    }
    vec![ga, gb]
}

fn concat_backward<S: Scalar>(
    inputs: &[Tensor<S>],
    output: &Tensor<S>,
    gout: &[S],
    needs: &[bool],
    splits: &[usize],
) -> Vec<Option<Vec<S>>> {
    let out_shape = output.shape();
    let outer = out_shape[0];
    let c_total = out_shape[1];
    let inner: usize = out_shape[2..].iter().product();
    let mut grads: Vec<Option<Vec<S>>> = inputs
        .iter()
        .zip(needs)
        .map(|(t, &n)| n.then(|| vec![S::zero(); t.numel()]))
        .collect();
    for o in 0..outer {
        let mut c0 = 0usize;
        for (gi, &ci) in grads.iter_mut().zip(splits) {
            if let Some(g) = gi {
                let src = &gout[(o * c_total + c0) * inner..(o * c_total + c0 + ci) * inner];
                g[o * ci * inner..(o + 1) * ci * inner].copy_from_slice(src);
            }
            c0 += ci;
        }
    }
    grads
}

fn linear_backward<S: Scalar>(inputs: &[Tensor<S>], gout: &[S], needs: &[bool]) -> Vec<Option<Vec<S>>> {
    let x = &inputs[0];
    let w = &inputs[1];
    let (n, k) = (x.shape()[0], x.shape()[1]);
    let m = w.shape()[0];
    let dx = needs[0].then(|| {
        let mut dx = vec![S::zero(); n * k];
        matmul_acc(gout, &w.data(), &mut dx, n, m, k);
        dx
    });
    let dw = needs[1].then(|| {
        let mut dw = vec![S::zero(); m * k];
        matmul_ta_acc(gout, &x.data(), &mut dw, m, n, k);
        dw
    });
    let mut out = vec![dx, dw];
    if inputs.len() > 2 {
        out.push(needs[2].then(|| {
            let mut db = vec![S::zero(); m];
            for row in gout.chunks_exact(m) {
                for (d, &g) in db.iter_mut().zip(row) {
                    *d += g;
                }
            }
            db
        }));
    }
    out
}

/// Per-channel iteration helper for `[N, C, ...]` layouts: calls `f(c, flat)`
/// for every element of channel `c`.
fn for_each_channel<S: Scalar>(x: &Tensor<S>, mut f: impl FnMut(usize, usize)) {
    let shape = x.shape();
    let (n, c) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product();
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * inner;
            for i in 0..inner {
                f(ch, base + i);
            }
        }
    }
}

fn bn_train_backward<S: Scalar>(
    inputs: &[Tensor<S>],
    gout: &[S],
    needs: &[bool],
    mean: &[S],
    inv_std: &[S],
) -> Vec<Option<Vec<S>>> {
    let x = &inputs[0];
    let gamma = inputs[1].data();
    let c = x.shape()[1];
    let m = (x.numel() / c) as f64;
    let xv = x.data();

    // Channel sums of g and g·x̂ feed both the parameter and input gradients.
    let mut sum_g = vec![S::zero(); c];
    let mut sum_gx = vec![S::zero(); c];
    for_each_channel(x, |ch, i| {
        let xhat = (xv[i] - mean[ch]) * inv_std[ch];
        sum_g[ch] += gout[i];
        sum_gx[ch] += gout[i] * xhat;
    });

    let dx = needs[0].then(|| {
        let inv_m = S::from_f64c(1.0 / m);
        let mut dx = vec![S::zero(); x.numel()];
        for_each_channel(x, |ch, i| {
            let xhat = (xv[i] - mean[ch]) * inv_std[ch];
            dx[i] = gamma[ch] * inv_std[ch] * (gout[i] - sum_g[ch] * inv_m - xhat * sum_gx[ch] * inv_m);
        });
        dx
    });
    let dgamma = needs[1].then(|| sum_gx.clone());
    let dbeta = needs[2].then(|| sum_g.clone());
    vec![dx, dgamma, dbeta]
}

fn bn_eval_backward<S: Scalar>(
    inputs: &[Tensor<S>],
    gout: &[S],
    needs: &[bool],
    mean: &[S],
    inv_std: &[S],
) -> Vec<Option<Vec<S>>> {
    let x = &inputs[0];
    let gamma = inputs[1].data();
    let c = x.shape()[1];
    let xv = x.data();
    let dx = needs[0].then(|| {
        let mut dx = vec![S::zero(); x.numel()];
        for_each_channel(x, |ch, i| {
            dx[i] = gout[i] * gamma[ch] * inv_std[ch];
        });
        dx
    });
    let dgamma = needs[1].then(|| {
        let mut dg = vec![S::zero(); c];
        for_each_channel(x, |ch, i| {
            dg[ch] += gout[i] * (xv[i] - mean[ch]) * inv_std[ch];
        });
        dg
    });
    let dbeta = needs[2].then(|| {
        let mut db = vec![S::zero(); c];
        for_each_channel(x, |ch, i| {
            db[ch] += gout[i];
        });
        db
    });
    vec![dx, dgamma, dbeta]
}
