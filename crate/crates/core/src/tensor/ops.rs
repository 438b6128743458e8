//! Forward implementations and validation for every tape operation.

use super::bcast::{broadcast_shapes, broadcast_strides, zip_broadcast};
use super::kernels::{conv2d_forward, ConvDims};
use super::tape::{BackOp, BinaryKind, Tape};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

impl<S: Scalar> Tape<S> {
    fn binary(&self, op_name: &'static str, kind: BinaryKind, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        let out_shape = broadcast_shapes(op_name, a.shape(), b.shape())?;
        let av = a.data();
        let bv = b.data();
        let mut out = vec![S::zero(); super::numel_of(&out_shape)];
        if a.shape() == b.shape() {
            match kind {
                BinaryKind::Add => {
                    for ((o, &x), &y) in out.iter_mut().zip(av.iter()).zip(bv.iter()) {
                        *o = x + y;
                    }
                }
                BinaryKind::Sub => {
                    for ((o, &x), &y) in out.iter_mut().zip(av.iter()).zip(bv.iter()) {
                        *o = x - y;
                    }
                }
                BinaryKind::Mul => {
                    for ((o, &x), &y) in out.iter_mut().zip(av.iter()).zip(bv.iter()) {
                        *o = x * y;
                    }
                }
            }
        } else {
            let rank = out_shape.len();
            let sa = broadcast_strides(a.shape(), rank);
            let sb = broadcast_strides(b.shape(), rank);
            match kind {
                BinaryKind::Add => zip_broadcast(&out_shape, &sa, &sb, |f, ia, ib| out[f] = av[ia] + bv[ib]),
                BinaryKind::Sub => zip_broadcast(&out_shape, &sa, &sb, |f, ia, ib| out[f] = av[ia] - bv[ib]),
                BinaryKind::Mul => zip_broadcast(&out_shape, &sa, &sb, |f, ia, ib| out[f] = av[ia] * bv[ib]),
            }
        }
        drop(av);
        drop(bv);
        let out = Tensor::new_raw(out_shape, out, false);
        Ok(self.emit(vec![a.clone(), b.clone()], out, || BackOp::Binary { kind }))
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary("add", BinaryKind::Add, a, b)
    }

    /// Elementwise difference with broadcasting.
    pub fn sub(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary("sub", BinaryKind::Sub, a, b)
    }

    /// Elementwise (Hadamard) product with broadcasting.
    pub fn mul(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary("mul", BinaryKind::Mul, a, b)
    }

    fn unary(&self, x: &Tensor<S>, f: impl Fn(S) -> S, op: impl FnOnce() -> BackOp<S>) -> Tensor<S> {
        let out: Vec<S> = x.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new_raw(x.shape().to_vec(), out, false);
        self.emit(vec![x.clone()], out, op)
    }

    /// `m·x + c` applied elementwise.
    pub fn affine(&self, x: &Tensor<S>, m: f64, c: f64) -> Result<Tensor<S>> {
        let (ms, cs) = (S::from_f64c(m), S::from_f64c(c));
        Ok(self.unary(x, |v| ms * v + cs, || BackOp::AffineScalar { m: ms }))
    }

    /// `s·x` elementwise.
    pub fn scale(&self, x: &Tensor<S>, s: f64) -> Result<Tensor<S>> {
        self.affine(x, s, 0.0)
    }

    /// `1 − x` elementwise.
    pub fn one_minus(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.affine(x, -1.0, 1.0)
    }

    pub fn square(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.unary(x, |v| v * v, || BackOp::Square))
    }

    pub fn exp(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.unary(x, |v| v.exp(), || BackOp::Exp))
    }

    pub fn sigmoid(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.unary(x, |v| S::one() / (S::one() + (-v).exp()), || BackOp::Sigmoid))
    }

    pub fn relu(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.unary(x, |v| if v > S::zero() { v } else { S::zero() }, || BackOp::Relu))
    }

    pub fn leaky_relu(&self, x: &Tensor<S>, slope: f64) -> Result<Tensor<S>> {
        let ss = S::from_f64c(slope);
        Ok(self.unary(x, |v| if v > S::zero() { v } else { ss * v }, || BackOp::LeakyRelu { slope: ss }))
    }

    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut acc = S::zero();
        for &v in x.data().iter() {
            acc += v;
        }
        let out = Tensor::new_raw(Vec::new(), vec![acc], false);
        Ok(self.emit(vec![x.clone()], out, || BackOp::Sum))
    }

    /// Mean of all elements, as a rank-0 scalar.
    pub fn mean(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.numel() == 0 {
            return Err(Error::arg("mean", "tensor has no elements"));
        }
        let mut acc = S::zero();
        for &v in x.data().iter() {
            acc += v;
        }
        let out = Tensor::new_raw(Vec::new(), vec![acc * S::from_f64c(1.0 / x.numel() as f64)], false);
        Ok(self.emit(vec![x.clone()], out, || BackOp::Mean))
    }

    /// Mean over axis 0: `[N, rest…] → [rest…]`.
    pub fn mean_batch(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.rank() < 1 || x.shape()[0] == 0 {
            return Err(Error::shape("mean_batch", format!("need a non-empty leading axis, got {:?}", x.shape())));
        }
        let n = x.shape()[0];
        let rest = x.numel() / n;
        let scale = S::from_f64c(1.0 / n as f64);
        let mut out = vec![S::zero(); rest];
        for chunk in x.data().chunks_exact(rest) {
            for (o, &v) in out.iter_mut().zip(chunk) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o *= scale;
        }
        let out = Tensor::new_raw(x.shape()[1..].to_vec(), out, false);
        Ok(self.emit(vec![x.clone()], out, || BackOp::MeanBatch))
    }

    /// Mean over every axis after the second: `[N, C, …] → [N, C]`.
    pub fn mean_spatial(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.rank() < 3 {
            return Err(Error::shape("mean_spatial", format!("need rank ≥ 3, got {:?}", x.shape())));
        }
        let (n, c) = (x.shape()[0], x.shape()[1]);
        let inner: usize = x.shape()[2..].iter().product();
        if inner == 0 {
            return Err(Error::shape("mean_spatial", "empty spatial extent".to_string()));
        }
        let scale = S::from_f64c(1.0 / inner as f64);
        let data = x.data();
        let out: Vec<S> = (0..n * c)
            .map(|p| {
                let mut acc = S::zero();
                for &v in &data[p * inner..(p + 1) * inner] {
                    acc += v;
                }
                acc * scale
            })
            .collect();
        drop(data);
        let out = Tensor::new_raw(vec![n, c], out, false);
        Ok(self.emit(vec![x.clone()], out, || BackOp::MeanSpatial))
    }

    /// Concatenate along axis 1 (channels). All other dimensions must match.
    pub fn concat_c(&self, xs: &[&Tensor<S>]) -> Result<Tensor<S>> {
        if xs.is_empty() {
            return Err(Error::arg("concat_c", "no inputs"));
        }
        let first = xs[0].shape();
        if first.len() < 2 {
            return Err(Error::shape("concat_c", format!("need rank ≥ 2, got {:?}", first)));
        }
        for (i, x) in xs.iter().enumerate().skip(1) {
            let s = x.shape();
            if s.len() != first.len() {
                return Err(Error::shape("concat_c", format!("input {i} has rank {} vs {}", s.len(), first.len())));
            }
            for (d, (&a, &b)) in first.iter().zip(s.iter()).enumerate() {
                if d != 1 && a != b {
                    return Err(Error::shape("concat_c", format!("input {i} dimension {d}: {b} vs {a}")));
                }
            }
        }
        let outer = first[0];
        let inner: usize = first[2..].iter().product();
        let splits: Vec<usize> = xs.iter().map(|x| x.shape()[1]).collect();
        let c_total: usize = splits.iter().sum();
        let mut out_shape = first.to_vec();
        out_shape[1] = c_total;
        let mut out = vec![S::zero(); outer * c_total * inner];
        for o in 0..outer {
            let mut c0 = 0usize;
            for (x, &ci) in xs.iter().zip(&splits) {
                let data = x.data();
                let src = &data[o * ci * inner..(o + 1) * ci * inner];
                out[(o * c_total + c0) * inner..(o * c_total + c0 + ci) * inner].copy_from_slice(src);
                c0 += ci;
            }
        }
        let out = Tensor::new_raw(out_shape, out, false);
        let inputs: Vec<Tensor<S>> = xs.iter().map(|&x| x.clone()).collect();
        Ok(self.emit(inputs, out, || BackOp::ConcatC { splits }))
    }

    /// Channel slice `[.., start..start+len, ..]` along axis 1.
    pub fn narrow_c(&self, x: &Tensor<S>, start: usize, len: usize) -> Result<Tensor<S>> {
        if x.rank() < 2 {
            return Err(Error::shape("narrow_c", format!("need rank ≥ 2, got {:?}", x.shape())));
        }
        let c = x.shape()[1];
        if start + len > c || len == 0 {
            return Err(Error::arg("narrow_c", format!("slice {start}..{} out of {c} channels", start + len)));
        }
        let outer = x.shape()[0];
        let inner: usize = x.shape()[2..].iter().product();
        let mut out_shape = x.shape().to_vec();
        out_shape[1] = len;
        let data = x.data();
        let mut out = vec![S::zero(); outer * len * inner];
        for o in 0..outer {
            let src = &data[(o * c + start) * inner..(o * c + start + len) * inner];
            out[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
        }
        drop(data);
        let out = Tensor::new_raw(out_shape, out, false);
        Ok(self.emit(vec![x.clone()], out, || BackOp::NarrowC { start }))
    }

    /// Reinterpret `x` under a new shape with the same element count and
    /// row-major order.
    pub fn reshape(&self, x: &Tensor<S>, shape: &[usize]) -> Result<Tensor<S>> {
        let numel: usize = shape.iter().product();
        if numel != x.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} has {} elements but {shape:?} needs {numel}", x.shape(), x.numel()),
            ));
        }
        let out = Tensor::new_raw(shape.to_vec(), x.data().to_vec(), false);
        Ok(self.emit(vec![x.clone()], out, || BackOp::Reshape))
    }

    /// 2-D convolution: `x [N,C,H,W]`, square kernel `w [F,C,k,k]`, optional
    /// bias `[F]`, symmetric zero padding.
    pub fn conv2d(
        &self,
        x: &Tensor<S>,
        w: &Tensor<S>,
        bias: Option<&Tensor<S>>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<S>> {
        if x.rank() != 4 {
            return Err(Error::shape("conv2d", format!("input must be [N,C,H,W], got {:?}", x.shape())));
        }
        if w.rank() != 4 || w.shape()[2] != w.shape()[3] {
            return Err(Error::shape("conv2d", format!("kernel must be [F,C,k,k], got {:?}", w.shape())));
        }
        let (n, c_in, h, width) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (c_out, wc, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        if wc != c_in {
            return Err(Error::shape("conv2d", format!("dimension 1 (channels): kernel has {wc}, input has {c_in}")));
        }
        if let Some(b) = bias {
            if b.shape() != [c_out] {
                return Err(Error::shape("conv2d", format!("bias must be [{c_out}], got {:?}", b.shape())));
            }
        }
        let dims = ConvDims::new(c_in, h, width, c_out, k, stride, pad)
            .ok_or_else(|| Error::arg("conv2d", format!("kernel {k}×{k} stride {stride} pad {pad} does not fit {h}×{width}")))?;
        let mut y = vec![S::zero(); n * c_out * dims.oh * dims.ow];
        let mut cols = vec![S::zero(); n * dims.col_rows() * dims.col_cols()];
        {
            let xd = x.data();
            let wd = w.data();
            let bd = bias.map(|b| b.data());
            conv2d_forward(&xd, &wd, bd.as_deref().map(|v| &v[..]), n, &dims, &mut y, &mut cols);
        }
        let out = Tensor::new_raw(vec![n, c_out, dims.oh, dims.ow], y, false);
        let mut inputs = vec![x.clone(), w.clone()];
        if let Some(b) = bias {
            inputs.push(b.clone());
        }
        Ok(self.emit(inputs, out, move || BackOp::Conv2d { dims, batch: n, cols }))
    }

    /// Dense affine layer: `x [N,K] · wᵀ [K,M] (+ b) → [N,M]`.
    pub fn linear(&self, x: &Tensor<S>, w: &Tensor<S>, bias: Option<&Tensor<S>>) -> Result<Tensor<S>> {
        if x.rank() != 2 || w.rank() != 2 {
            return Err(Error::shape("linear", format!("need [N,K] and [M,K], got {:?} and {:?}", x.shape(), w.shape())));
        }
        let (n, k) = (x.shape()[0], x.shape()[1]);
        let (m, wk) = (w.shape()[0], w.shape()[1]);
        if wk != k {
            return Err(Error::shape("linear", format!("dimension 1 (features): weight has {wk}, input has {k}")));
        }
        if let Some(b) = bias {
            if b.shape() != [m] {
                return Err(Error::shape("linear", format!("bias must be [{m}], got {:?}", b.shape())));
            }
        }
        let mut y = vec![S::zero(); n * m];
        {
            let xd = x.data();
            let wd = w.data();
            if let Some(b) = bias {
                let bd = b.data();
                for row in y.chunks_exact_mut(m) {
                    row.copy_from_slice(&bd);
                }
            }
            // y[n,m] += x[n,k]·w[m,k]ᵀ
            super::kernels::matmul_abt_acc(&xd, &wd, &mut y, n, k, m);
        }
        let out = Tensor::new_raw(vec![n, m], y, false);
        let mut inputs = vec![x.clone(), w.clone()];
        if let Some(b) = bias {
            inputs.push(b.clone());
        }
        Ok(self.emit(inputs, out, || BackOp::Linear))
    }

    /// Batch normalization in training mode: normalizes with the batch moments
    /// and (optionally) folds them into running statistics in place.
    pub fn batch_norm_train(
        &self,
        x: &Tensor<S>,
        gamma: &Tensor<S>,
        beta: &Tensor<S>,
        momentum: f64,
        eps: f64,
        running: Option<(&mut [S], &mut [S])>,
    ) -> Result<Tensor<S>> {
        let c = self.bn_validate("batch_norm_train", x, gamma, beta, eps)?;
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::arg("batch_norm_train", format!("momentum {momentum} outside [0,1]")));
        }
        let m = x.numel() / c;
        if m == 0 {
            return Err(Error::shape("batch_norm_train", "no elements to normalize".to_string()));
        }
        let inv_m = S::from_f64c(1.0 / m as f64);
        let mut mean = vec![S::zero(); c];
        let mut var = vec![S::zero(); c];
        let shape = x.shape().to_vec();
        let inner: usize = shape[2..].iter().product();
        {
            let xd = x.data();
            for s in 0..shape[0] {
                for (ch, m) in mean.iter_mut().enumerate() {
                    let base = (s * c + ch) * inner;
                    let mut acc = S::zero();
                    for &v in &xd[base..base + inner] {
                        acc += v;
                    }
                    *m += acc;
                }
            }
            for v in mean.iter_mut() {
                *v *= inv_m;
            }
            for s in 0..shape[0] {
                for ch in 0..c {
                    let base = (s * c + ch) * inner;
                    let mu = mean[ch];
                    let mut acc = S::zero();
                    for &v in &xd[base..base + inner] {
                        let d = v - mu;
                        acc += d * d;
                    }
                    var[ch] += acc;
                }
            }
            for v in var.iter_mut() {
                *v *= inv_m;
            }
        }
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + S::from_f64c(eps)).sqrt()).collect();
        if let Some((rmean, rvar)) = running {
            if rmean.len() != c || rvar.len() != c {
                return Err(Error::shape("batch_norm_train", format!("running stats must have {c} channels")));
            }
            let mom = S::from_f64c(momentum);
            let keep = S::one() - mom;
            for ch in 0..c {
                rmean[ch] = keep * rmean[ch] + mom * mean[ch];
                rvar[ch] = keep * rvar[ch] + mom * var[ch];
            }
        }
        let out = self.bn_apply(x, gamma, beta, &mean, &inv_std);
        Ok(self.emit(vec![x.clone(), gamma.clone(), beta.clone()], out, move || BackOp::BatchNormTrain {
            mean,
            inv_std,
        }))
    }

    /// Batch normalization in eval mode: normalizes with frozen running stats.
    pub fn batch_norm_eval(
        &self,
        x: &Tensor<S>,
        gamma: &Tensor<S>,
        beta: &Tensor<S>,
        running_mean: &[S],
        running_var: &[S],
        eps: f64,
    ) -> Result<Tensor<S>> {
        let c = self.bn_validate("batch_norm_eval", x, gamma, beta, eps)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape("batch_norm_eval", format!("running stats must have {c} channels")));
        }
        let mean = running_mean.to_vec();
        let inv_std: Vec<S> = running_var.iter().map(|&v| S::one() / (v + S::from_f64c(eps)).sqrt()).collect();
        let out = self.bn_apply(x, gamma, beta, &mean, &inv_std);
        Ok(self.emit(vec![x.clone(), gamma.clone(), beta.clone()], out, move || BackOp::BatchNormEval {
            mean,
            inv_std,
        }))
    }

    fn bn_validate(&self, op: &'static str, x: &Tensor<S>, gamma: &Tensor<S>, beta: &Tensor<S>, eps: f64) -> Result<usize> {
        if x.rank() < 2 {
            return Err(Error::shape(op, format!("need [N,C,…], got {:?}", x.shape())));
        }
        let c = x.shape()[1];
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::shape(
                op,
                format!("gamma/beta must be [{c}], got {:?} and {:?}", gamma.shape(), beta.shape()),
            ));
        }
        if eps <= 0.0 {
            return Err(Error::arg(op, format!("eps {eps} must be positive")));
        }
        Ok(c)
    }

    fn bn_apply(&self, x: &Tensor<S>, gamma: &Tensor<S>, beta: &Tensor<S>, mean: &[S], inv_std: &[S]) -> Tensor<S> {
        let shape = x.shape().to_vec();
        let c = shape[1];
        let inner: usize = shape[2..].iter().product();
        let xd = x.data();
        let g = gamma.data();
        let b = beta.data();
        let mut out = vec![S::zero(); x.numel()];
        for s in 0..shape[0] {
            for ch in 0..c {
                let base = (s * c + ch) * inner;
                let (mu, istd, ga, be) = (mean[ch], inv_std[ch], g[ch], b[ch]);
                for (o, &v) in out[base..base + inner].iter_mut().zip(&xd[base..base + inner]) {
                    *o = (v - mu) * istd * ga + be;
                }
            }
        }
        Tensor::new_raw(shape, out, false)
    }

    /// Max pooling with square window `k` and the given stride (no padding).
    pub fn max_pool2d(&self, x: &Tensor<S>, k: usize, stride: usize) -> Result<Tensor<S>> {
        if x.rank() != 4 {
            return Err(Error::shape("max_pool2d", format!("input must be [N,C,H,W], got {:?}", x.shape())));
        }
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        if k == 0 || stride == 0 || k > h || k > w {
            return Err(Error::arg("max_pool2d", format!("window {k} stride {stride} does not fit {h}×{w}")));
        }
        let oh = (h - k) / stride + 1;
        let ow = (w - k) / stride + 1;
        let xd = x.data();
        let mut out = vec![S::zero(); n * c * oh * ow];
        let mut argmax = vec![0u32; out.len()];
        for p in 0..n * c {
            let plane = &xd[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = S::neg_infinity();
                    let mut best_at = 0usize;
                    for ky in 0..k {
                        for kx in 0..k {
                            let at = (oy * stride + ky) * w + ox * stride + kx;
                            if plane[at] > best {
                                best = plane[at];
                                best_at = at;
                            }
                        }
                    }
                    let o = (p * oh + oy) * ow + ox;
                    out[o] = best;
                    argmax[o] = (p * h * w + best_at) as u32;
                }
            }
        }
        drop(xd);
        let out = Tensor::new_raw(vec![n, c, oh, ow], out, false);
        Ok(self.emit(vec![x.clone()], out, move || BackOp::MaxPool { argmax }))
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&self, x: &Tensor<S>, factor: usize) -> Result<Tensor<S>> {
        if x.rank() != 4 {
            return Err(Error::shape("upsample_nearest", format!("input must be [N,C,H,W], got {:?}", x.shape())));
        }
        if factor == 0 {
            return Err(Error::arg("upsample_nearest", "factor must be ≥ 1"));
        }
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oh, ow) = (h * factor, w * factor);
        let xd = x.data();
        let mut out = vec![S::zero(); n * c * oh * ow];
        for p in 0..n * c {
            let src = &xd[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for oy in 0..oh {
                let srow = &src[(oy / factor) * w..(oy / factor + 1) * w];
                let drow = &mut dst[oy * ow..(oy + 1) * ow];
                for (ox, d) in drow.iter_mut().enumerate() {
                    *d = srow[ox / factor];
                }
            }
        }
        drop(xd);
        let out = Tensor::new_raw(vec![n, c, oh, ow], out, false);
        Ok(self.emit(vec![x.clone()], out, move || BackOp::Upsample { factor }))
    }

    /// Numerically stable elementwise binary cross-entropy on logits. The
    /// target tensor is treated as a constant.
    pub fn bce_with_logits(&self, logits: &Tensor<S>, targets: &Tensor<S>) -> Result<Tensor<S>> {
        if logits.shape() != targets.shape() {
            return Err(Error::shape(
                "bce_with_logits",
                format!("logits {:?} vs targets {:?}", logits.shape(), targets.shape()),
            ));
        }
        if targets.requires_grad() {
            return Err(Error::arg("bce_with_logits", "targets must not require gradients"));
        }
        let xd = logits.data();
        let td = targets.data();
        // max(x,0) − x·t + ln(1 + e^{−|x|})
        let out: Vec<S> = xd
            .iter()
            .zip(td.iter())
            .map(|(&x, &t)| x.max(S::zero()) - x * t + (S::one() + (-x.abs()).exp()).ln())
            .collect();
        drop(xd);
        drop(td);
        let out = Tensor::new_raw(logits.shape().to_vec(), out, false);
        Ok(self.emit(vec![logits.clone(), targets.clone()], out, || BackOp::BceWithLogits))
    }

    /// Fused softmax + cross-entropy, averaged over cells.
    ///
    /// `logits` is `[outer, C, …]`; each of the `outer·inner` cells holds one
    /// C-way decision. `labels` are row-major over `(outer, inner)`. With
    /// `weights`, the result is `Σ wᵢ·ceᵢ / Σ wᵢ` (zero when all weights are
    /// zero); without, the plain mean in natural log units.
    pub fn softmax_ce(&self, logits: &Tensor<S>, labels: &[u32], weights: Option<&[f32]>) -> Result<Tensor<S>> {
        if logits.rank() < 2 {
            return Err(Error::shape("softmax_ce", format!("need [outer,C,…], got {:?}", logits.shape())));
        }
        let outer = logits.shape()[0];
        let classes = logits.shape()[1];
        let inner: usize = logits.shape()[2..].iter().product();
        let cells = outer * inner;
        if labels.len() != cells {
            return Err(Error::shape("softmax_ce", format!("{cells} cells but {} labels", labels.len())));
        }
        if let Some(w) = weights {
            if w.len() != cells {
                return Err(Error::shape("softmax_ce", format!("{cells} cells but {} weights", w.len())));
            }
        }
        for (i, &l) in labels.iter().enumerate() {
            if l as usize >= classes {
                return Err(Error::arg("softmax_ce", format!("label {l} at cell {i} outside 0..{classes}")));
            }
        }
        let wsum: f64 = match weights {
            Some(w) => w.iter().map(|&v| v as f64).sum(),
            None => cells as f64,
        };
        let xd = logits.data();
        let mut probs = vec![S::zero(); cells * classes];
        let mut weight_over_wsum = vec![S::zero(); cells];
        let mut loss = 0.0f64;
        for o in 0..outer {
            for i in 0..inner {
                let cell = o * inner + i;
                let wcell = weights.map_or(1.0, |w| w[cell] as f64);
                let mut maxv = S::neg_infinity();
                for c in 0..classes {
                    maxv = maxv.max(xd[(o * classes + c) * inner + i]);
                }
                let mut denom = S::zero();
                for c in 0..classes {
                    denom += (xd[(o * classes + c) * inner + i] - maxv).exp();
                }
                let log_denom = denom.ln();
                for c in 0..classes {
                    let shifted = xd[(o * classes + c) * inner + i] - maxv;
                    probs[cell * classes + c] = (shifted - log_denom).exp();
                }
                if wsum > 0.0 && wcell != 0.0 {
                    let label = labels[cell] as usize;
                    let shifted = xd[(o * classes + label) * inner + i] - maxv;
                    let ce = (log_denom - shifted).to_f64c();
                    loss += wcell * ce;
                    weight_over_wsum[cell] = S::from_f64c(wcell / wsum);
                }
            }
        }
        drop(xd);
        let value = if wsum > 0.0 { loss / wsum } else { 0.0 };
        let out = Tensor::new_raw(Vec::new(), vec![S::from_f64c(value)], false);
        let labels = labels.to_vec();
        Ok(self.emit(vec![logits.clone()], out, move || BackOp::SoftmaxCe {
            probs,
            labels,
            weight_over_wsum,
            classes,
        }))
    }
}
