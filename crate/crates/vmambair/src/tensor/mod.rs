//! Dense row-major tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is a cheaply clonable handle to a buffer plus an optional
//! record of the operation that produced it. Operations that see at least one
//! `requires_grad` input append themselves to the implicit graph by storing
//! their parents and a backward closure; [`Tensor::backward`] replays those
//! closures in reverse topological order.

pub mod conv;
mod ops;

pub use conv::{conv2d, conv2d_grouped, dwconv2d};
pub use ops::*;

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use num_traits::{Float, FromPrimitive};

use crate::error::{Result, TensorError};

/// Scalar element type of a tensor. f64 is used by tests and oracles, f32 by
/// the training path.
pub trait Element:
    Float
    + FromPrimitive
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;

    fn of_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 conversion")
    }
    fn as_f64(self) -> f64;

    /// exp() variant the hot kernels use. Exact for f64; a ~1e-7-relative
    /// polynomial for f32 where libm latency dominates the scan kernels.
    fn exp_fast(self) -> Self;
}

impl Element for f64 {
    const DTYPE: Dtype = Dtype::F64;
    fn as_f64(self) -> f64 {
        self
    }
    fn exp_fast(self) -> f64 {
        self.exp()
    }
}

impl Element for f32 {
    const DTYPE: Dtype = Dtype::F32;
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn exp_fast(self) -> f32 {
        exp_f32(self)
    }
}

/// Cephes-style expf: range reduction by ln 2 in two pieces, degree-5
/// polynomial, exponent reassembled through the bit pattern.
#[inline]
pub fn exp_f32(x: f32) -> f32 {
    const LOG2E: f32 = 1.442_695_04;
    const C1: f32 = 0.693_359_375;
    const C2: f32 = -2.121_944_4e-4;
    let x = x.clamp(-87.3, 88.7);
    let n = (x * LOG2E).round();
    let r = x - n * C1 - n * C2;
    let mut p = 1.987_569_1e-4f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_5e-2;
    p = p * r + 1.666_666_6e-1;
    p = p * r + 5e-1;
    let poly = p * r * r + r + 1.0;
    let bits = (((n as i32) + 127) as u32) << 23;
    poly * f32::from_bits(bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

struct Op<T: Element> {
    parents: Vec<Tensor<T>>,
    backward: Box<dyn Fn(&[T])>,
}

struct Inner<T: Element> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    op: Option<Op<T>>,
    backward_run: Cell<bool>,
}

pub struct Tensor<T: Element> {
    inner: Rc<Inner<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Element> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            self.inner.id, self.inner.shape, self.inner.requires_grad
        )
    }
}

impl<T: Element> Tensor<T> {
    fn make(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        op: Option<Op<T>>,
    ) -> Tensor<T> {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                op,
                backward_run: Cell::new(false),
            }),
        }
    }

    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Tensor<T>> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(TensorError::Dim(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self::make(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor that participates in gradient computation.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Tensor<T>> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(TensorError::Dim(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self::make(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Tensor<T> {
        Self::make(shape.to_vec(), vec![T::zero(); shape.iter().product()], false, None)
    }

    pub fn full(shape: &[usize], v: T) -> Tensor<T> {
        Self::make(shape.to_vec(), vec![v; shape.iter().product()], false, None)
    }

    pub fn scalar(v: T) -> Tensor<T> {
        Self::make(vec![1], vec![v], false, None)
    }

    /// Node produced by an operation. If no parent requires grad the backward
    /// closure is dropped and the result is a plain constant.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: &[&Tensor<T>],
        backward: impl Fn(&[T]) + 'static,
    ) -> Tensor<T> {
        let rg = parents.iter().any(|p| p.inner.requires_grad);
        let op = if rg {
            Some(Op {
                parents: parents.iter().map(|p| (*p).clone()).collect(),
                backward: Box::new(backward),
            })
        } else {
            None
        };
        Self::make(shape, data, rg, op)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }
    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }
    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }
    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }
    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }
    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1);
        self.inner.data.borrow()[0]
    }

    /// Mutate the underlying buffer in place (optimizer updates, loading).
    pub fn apply<F: FnOnce(&mut [T])>(&self, f: F) {
        f(&mut self.inner.data.borrow_mut());
    }

    pub fn set_data(&self, data: Vec<T>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(TensorError::Dim(format!(
                "set_data length {} vs numel {}",
                data.len(),
                self.numel()
            )));
        }
        *self.inner.data.borrow_mut() = data;
        Ok(())
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Accumulate into this tensor's gradient buffer (no-op unless the tensor
    /// participates in gradient computation).
    pub(crate) fn accum_grad<F: FnOnce(&mut [T])>(&self, f: F) {
        if !self.inner.requires_grad {
            return;
        }
        let mut g = self.inner.grad.borrow_mut();
        let buf = g.get_or_insert_with(|| vec![T::zero(); self.numel()]);
        f(buf);
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.borrow().iter().all(|v| v.is_finite())
    }

    /// Reverse-mode sweep from a scalar loss. Populates `grad` on every
    /// reachable `requires_grad` tensor. A second call on the same node is an
    /// error; build a fresh graph instead.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::State(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.inner.requires_grad {
            return Err(TensorError::State(
                "loss is detached from any differentiable input".into(),
            ));
        }
        if self.inner.backward_run.replace(true) {
            return Err(TensorError::State(
                "backward already called on this node".into(),
            ));
        }
        let order = self.topo_order();
        *self.inner.grad.borrow_mut() = Some(vec![T::one()]);
        for node in order.iter().rev() {
            if let Some(op) = &node.inner.op {
                let g = node.inner.grad.borrow();
                if let Some(g) = g.as_deref() {
                    (op.backward)(g);
                }
            }
        }
        Ok(())
    }

    fn topo_order(&self) -> Vec<Tensor<T>> {
        enum Step<T: Element> {
            Enter(Tensor<T>),
            Exit(Tensor<T>),
        }
        let mut out = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![Step::Enter(self.clone())];
        while let Some(step) = stack.pop() {
            match step {
                Step::Enter(t) => {
                    if !seen.insert(t.inner.id) {
                        continue;
                    }
                    stack.push(Step::Exit(t.clone()));
                    if let Some(op) = &t.inner.op {
                        for p in &op.parents {
                            if p.inner.requires_grad && !seen.contains(&p.inner.id) {
                                stack.push(Step::Enter(p.clone()));
                            }
                        }
                    }
                }
                Step::Exit(t) => out.push(t),
            }
        }
        out
    }
}
