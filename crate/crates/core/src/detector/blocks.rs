//! Convolution building blocks shared by the backbone, fusion modules, heads,
//! discriminators, and SSL heads: a bare conv layer and the conv + batchnorm
//! + ReLU unit the network is assembled from.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

use super::params::{Fwd, ParamStore};

/// Batchnorm running-statistics momentum (fraction of the batch moment folded
/// in per training step) and variance floor.
pub(crate) const BN_MOMENTUM: f64 = 0.1;
pub(crate) const BN_EPS: f64 = 1e-5;

/// One conv layer's wiring: where its weights live and how it is applied.
/// Parameters are `<name>.w` (shape `[c_out, c_in, k, k]`) and, when `bias`
/// is set, `<name>.b` (`[c_out]`).
#[derive(Debug, Clone)]
pub(crate) struct Conv2dSpec {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub bias: bool,
}

impl Conv2dSpec {
    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize, bias: bool) -> Self {
        Conv2dSpec { name: name.into(), c_in, c_out, k, stride, pad, bias }
    }

    /// Register He-initialized weights (std `√(2/fan_in)`) and a zero bias.
    pub fn init<S: Scalar>(&self, store: &mut ParamStore<S>, rng: &mut impl Rng) -> Result<()> {
        let fan_in = (self.c_in * self.k * self.k) as f64;
        let w = Tensor::randn(&[self.c_out, self.c_in, self.k, self.k], (2.0 / fan_in).sqrt(), rng);
        store.insert_param(&format!("{}.w", self.name), w)?;
        if self.bias {
            store.insert_param(&format!("{}.b", self.name), Tensor::zeros(&[self.c_out]))?;
        }
        Ok(())
    }

    pub fn forward<S: Scalar>(&self, fwd: &Fwd<'_, S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        let w = fwd.store.param(&format!("{}.w", self.name))?;
        let b = if self.bias { Some(fwd.store.param(&format!("{}.b", self.name))?) } else { None };
        fwd.tape.conv2d(x, w, b, self.stride, self.pad)
    }
}

/// Conv → batchnorm → ReLU. The conv carries no bias (batchnorm's shift
/// subsumes it); batchnorm parameters are `<name>.bn.g` / `<name>.bn.b` and
/// its running statistics are the buffers `<name>.bn.rm` / `<name>.bn.rv`.
#[derive(Debug, Clone)]
pub(crate) struct ConvBlock {
    pub conv: Conv2dSpec,
}

impl ConvBlock {
    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize) -> Self {
        ConvBlock { conv: Conv2dSpec::new(name, c_in, c_out, k, stride, pad, false) }
    }

    pub fn init<S: Scalar>(&self, store: &mut ParamStore<S>, rng: &mut impl Rng) -> Result<()> {
        self.conv.init(store, rng)?;
        let c = self.conv.c_out;
        store.insert_param(&format!("{}.bn.g", self.conv.name), Tensor::full(&[c], 1.0))?;
        store.insert_param(&format!("{}.bn.b", self.conv.name), Tensor::zeros(&[c]))?;
        store.insert_buffer(&format!("{}.bn.rm", self.conv.name), vec![S::zero(); c])?;
        store.insert_buffer(&format!("{}.bn.rv", self.conv.name), vec![S::one(); c])?;
        Ok(())
    }

    pub fn forward<S: Scalar>(&self, fwd: &Fwd<'_, S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        let y = self.conv.forward(fwd, x)?;
        let name = &self.conv.name;
        let gamma = fwd.store.param(&format!("{name}.bn.g"))?;
        let beta = fwd.store.param(&format!("{name}.bn.b"))?;
        let rm = fwd.store.buffer(&format!("{name}.bn.rm"))?;
        let rv = fwd.store.buffer(&format!("{name}.bn.rv"))?;
        let y = if fwd.train {
            let mut rm = rm.borrow_mut();
            let mut rv = rv.borrow_mut();
            fwd.tape.batch_norm_train(&y, gamma, beta, BN_MOMENTUM, BN_EPS, Some((&mut rm, &mut rv)))?
        } else {
            fwd.tape.batch_norm_eval(&y, gamma, beta, &rm.borrow(), &rv.borrow(), BN_EPS)?
        };
        fwd.tape.relu(&y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block_fixture() -> (ConvBlock, ParamStore<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let block = ConvBlock::new("t", 3, 8, 3, 2, 1);
        let mut store = ParamStore::new();
        block.init(&mut store, &mut rng).unwrap();
        (block, store)
    }

    #[test]
    fn conv_block_halves_spatial_dims_at_stride_two() {
        let (block, store) = block_fixture();
        let tape = Tape::new();
        let x = Tensor::randn(&[2, 3, 16, 16], 1.0, &mut ChaCha8Rng::seed_from_u64(4));
        let y = block.forward(&Fwd { tape: &tape, store: &store, train: true }, &x).unwrap();
        assert_eq!(y.shape(), [2, 8, 8, 8]);
        // ReLU output is non-negative by construction.
        assert!(y.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn train_mode_updates_running_stats_eval_mode_freezes_them() {
        let (block, store) = block_fixture();
        let x = Tensor::randn(&[2, 3, 16, 16], 1.0, &mut ChaCha8Rng::seed_from_u64(5));
        let before = store.buffer("t.bn.rm").unwrap().borrow().clone();

        let tape = Tape::new();
        block.forward(&Fwd { tape: &tape, store: &store, train: true }, &x).unwrap();
        let after_train = store.buffer("t.bn.rm").unwrap().borrow().clone();
        assert_ne!(before, after_train, "training must fold batch moments in");

        let tape = Tape::inference();
        block.forward(&Fwd { tape: &tape, store: &store, train: false }, &x).unwrap();
        let after_eval = store.buffer("t.bn.rm").unwrap().borrow().clone();
        assert_eq!(after_train, after_eval, "eval must leave running stats untouched");
    }

    #[test]
    fn init_registers_expected_names() {
        let (_, store) = block_fixture();
        let names: Vec<&str> = store.params().map(|(n, _)| n).collect();
        assert_eq!(names, ["t.bn.b", "t.bn.g", "t.w"]);
        assert_eq!(store.param("t.w").unwrap().shape(), [8, 3, 3, 3]);
    }
}
