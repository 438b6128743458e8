//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! Values are plain heap buffers behind shared handles; a [`Tape`] records the
//! operations applied through it and replays them in reverse to accumulate
//! gradients. The whole engine is generic over [`Scalar`] so models train in
//! `f32` while gradient checks run the identical code in `f64`.
//!
//! Tapes and tensors are deliberately single-threaded (`Rc`/`RefCell`); the
//! compute kernels underneath may use data parallelism internally, always with
//! a fixed reduction order so results are bit-identical run to run.

mod bcast;
mod gradcheck;
mod io;
mod kernels;
mod ops;
mod optim;
mod tape;

pub use gradcheck::{check_gradients, op_cases, GradCheck, OpCase};
pub use io::{read_mdt, read_mdt_bytes, write_mdt, write_mdt_bytes};
pub use optim::{zero_grads, Adam, Sgd};
pub use tape::Tape;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Element type of the engine: `f32` for training, `f64` for numeric checks.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64c(v: f64) -> Self;
    fn to_f64c(self) -> f64;
    fn from_f32c(v: f32) -> Self;
    fn to_f32c(self) -> f32;
}

impl Scalar for f32 {
    #[inline(always)]
    fn from_f64c(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn to_f64c(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn from_f32c(v: f32) -> Self {
        v
    }
    #[inline(always)]
    fn to_f32c(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn from_f64c(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn to_f64c(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from_f32c(v: f32) -> Self {
        v as f64
    }
    #[inline(always)]
    fn to_f32c(self) -> f32 {
        self as f32
    }
}

static NEXT_TENSOR_ID: AtomicU64 = AtomicU64::new(1);

struct Inner<S: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<S>>,
    grad: RefCell<Option<Vec<S>>>,
    requires_grad: Cell<bool>,
}

/// Shared handle to a dense row-major value. Cloning is shallow; two clones
/// observe the same data and gradient buffers.
pub struct Tensor<S: Scalar> {
    inner: Rc<Inner<S>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor { inner: Rc::clone(&self.inner) }
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad.get())
            .finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<S: Scalar> Tensor<S> {
    /// Build a tensor from a shape and matching buffer.
    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {:?} wants {} elements, buffer has {}", shape, numel_of(shape), data.len()),
            ));
        }
        Ok(Self::new_raw(shape.to_vec(), data, false))
    }

    pub fn from_f32s(shape: &[usize], data: &[f32]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| S::from_f32c(v)).collect())
    }

    pub fn from_f64s(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| S::from_f64c(v)).collect())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new_raw(shape.to_vec(), vec![S::zero(); numel_of(shape)], false)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::new_raw(shape.to_vec(), vec![S::from_f64c(value); numel_of(shape)], false)
    }

    /// Rank-0 scalar.
    pub fn scalar(value: f64) -> Self {
        Self::new_raw(Vec::new(), vec![S::from_f64c(value)], false)
    }

    /// I.i.d. normal entries with the given standard deviation.
    pub fn randn(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let data = (0..numel_of(shape))
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                S::from_f64c(z * std)
            })
            .collect();
        Self::new_raw(shape.to_vec(), data, false)
    }

    pub(crate) fn new_raw(shape: Vec<usize>, data: Vec<S>, requires_grad: bool) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_TENSOR_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: Cell::new(requires_grad),
            }),
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.inner.shape)
    }

    pub fn data(&self) -> Ref<'_, Vec<S>> {
        self.inner.data.borrow()
    }

    pub fn data_mut(&self) -> RefMut<'_, Vec<S>> {
        self.inner.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.inner.data.borrow().clone()
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.inner.data.borrow().iter().map(|v| v.to_f32c()).collect()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().iter().map(|v| v.to_f64c()).collect()
    }

    /// The single element of a scalar (or one-element) tensor.
    pub fn item(&self) -> Result<S> {
        if self.numel() != 1 {
            return Err(Error::shape("item", format!("tensor has shape {:?}, not a scalar", self.shape())));
        }
        Ok(self.inner.data.borrow()[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.get()
    }

    /// Mark as a trainable leaf (or freeze it again with `false`).
    pub fn set_requires_grad(&self, value: bool) {
        self.inner.requires_grad.set(value);
    }

    /// Builder-style variant of [`set_requires_grad`](Self::set_requires_grad).
    pub fn requiring_grad(self) -> Self {
        self.set_requires_grad(true);
        self
    }

    /// Cloned gradient buffer, if any backward pass has reached this tensor.
    pub fn grad(&self) -> Option<Vec<S>> {
        self.inner.grad.borrow().clone()
    }

    pub fn has_grad(&self) -> bool {
        self.inner.grad.borrow().is_some()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Add `delta` into the persistent gradient buffer (allocating it lazily).
    pub fn accumulate_grad(&self, delta: &[S]) {
        debug_assert_eq!(delta.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += *di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Apply `f(data, grad)` to the value and gradient buffers; used by
    /// optimizers for in-place updates.
    pub(crate) fn with_data_and_grad(&self, f: impl FnOnce(&mut [S], &[S])) -> Result<()> {
        let grad = self.inner.grad.borrow();
        let Some(g) = grad.as_ref() else {
            return Err(Error::MissingGrad { index: usize::MAX, numel: self.numel() });
        };
        f(&mut self.inner.data.borrow_mut(), g);
        Ok(())
    }

    /// A constant copy of this tensor: same values, fresh buffer, no gradient
    /// tracking. Used to cut a value out of the differentiated graph.
    pub fn detach(&self) -> Self {
        Self::new_raw(self.inner.shape.clone(), self.to_vec(), false)
    }

    /// Convert element type (e.g. an `f32` model tensor into an `f64` one for
    /// numeric checks).
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        let data = self.inner.data.borrow().iter().map(|v| T::from_f64c(v.to_f64c())).collect();
        Tensor::<T>::new_raw(self.inner.shape.clone(), data, false)
    }

    /// Overwrite the value buffer (shape must match).
    pub fn set_data(&self, values: &[S]) -> Result<()> {
        if values.len() != self.numel() {
            return Err(Error::shape(
                "set_data",
                format!("tensor holds {} elements, got {}", self.numel(), values.len()),
            ));
        }
        self.inner.data.borrow_mut().copy_from_slice(values);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_element_count() {
        let err = Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert!(err.to_string().contains("wants 6 elements"));
    }

    #[test]
    fn scalar_item_and_rank0_shape() {
        let t = Tensor::<f64>::scalar(2.5);
        assert_eq!(t.rank(), 0);
        assert_eq!(t.numel(), 1);
        assert_eq!(t.item().unwrap(), 2.5);
    }

    #[test]
    fn clone_is_shallow() {
        let t = Tensor::<f32>::zeros(&[4]);
        let u = t.clone();
        t.data_mut()[2] = 7.0;
        assert_eq!(u.data()[2], 7.0);
        assert_eq!(t.id(), u.id());
    }

    #[test]
    fn grad_accumulates_until_zeroed() {
        let t = Tensor::<f32>::zeros(&[3]);
        t.accumulate_grad(&[1.0, 2.0, 3.0]);
        t.accumulate_grad(&[1.0, 1.0, 1.0]);
        assert_eq!(t.grad().unwrap(), vec![2.0, 3.0, 4.0]);
        t.zero_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn detach_copies_and_drops_grad_tracking() {
        let t = Tensor::<f32>::from_vec(&[2], vec![1.0, 2.0]).unwrap().requiring_grad();
        let d = t.detach();
        assert!(!d.requires_grad());
        d.data_mut()[0] = 9.0;
        assert_eq!(t.data()[0], 1.0);
    }
}
