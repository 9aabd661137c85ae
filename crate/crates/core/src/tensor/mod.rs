//! Dense row-major tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable value plus an optional gradient slot. Every
//! differentiable operation records a node holding its parents and a backward
//! rule; [`Tensor::backward`] replays those nodes in reverse creation order.
//!
//! Precision is chosen by the element type: training runs on `f32`, and the
//! gradient-check suites instantiate the same code with `f64`.

mod autograd;
mod element;
pub mod gradcheck;
mod ops;

use std::cell::Cell;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

pub use autograd::Tape;
pub use element::{Element, MatLayout};
pub use ops::{BinaryKind, ReduceKind};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Disables graph recording on the current thread until the guard is dropped.
pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward rule: receives the parents, the forward output and the output
/// gradient; returns one optional gradient per parent.
pub(crate) type BackwardFn<E> = Box<dyn Fn(&[Tensor<E>], &[E], &[E]) -> Vec<Option<Vec<E>>> + Send + Sync>;

pub(crate) struct GradFn<E: Element> {
    pub(crate) op: &'static str,
    pub(crate) parents: Vec<Tensor<E>>,
    pub(crate) backward: BackwardFn<E>,
}

struct Node<E: Element> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<E>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<E>>>,
    grad_fn: Option<GradFn<E>>,
}

pub struct Tensor<E: Element = f32> {
    node: Arc<Node<E>>,
}

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            node: Arc::clone(&self.node),
        }
    }
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.node.shape);
        if self.numel() <= 16 {
            s.field("data", &self.node.data);
        }
        s.field("requires_grad", &self.node.requires_grad);
        if let Some(g) = &self.node.grad_fn {
            s.field("op", &g.op);
        }
        s.finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<E: Element> Tensor<E> {
    fn new_node(shape: Vec<usize>, data: Vec<E>, requires_grad: bool, grad_fn: Option<GradFn<E>>) -> Self {
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                grad_fn,
            }),
        }
    }

    /// Leaf tensor. Fails if the element count does not match the shape or a
    /// value is not finite.
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape(format!("zero-sized dimension in {shape:?}")));
        }
        if numel_of(shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {} values, got {}",
                numel_of(shape),
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "from_vec" });
        }
        Ok(Self::new_node(shape.to_vec(), data, false, None))
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| E::of(v)).collect())
    }

    pub fn scalar(value: E) -> Self {
        Self::from_vec(&[1], vec![value]).expect("finite scalar")
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, E::zero())
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        Self::from_vec(shape, vec![value; numel_of(shape)]).expect("valid full tensor")
    }

    /// Same values, marked as a trainable leaf.
    pub fn into_param(self) -> Self {
        let data = self.node.data.clone();
        Self::new_node(self.node.shape.clone(), data, true, None)
    }

    pub fn requires_grad_(self, flag: bool) -> Self {
        if flag == self.node.requires_grad && self.node.grad_fn.is_none() {
            return self;
        }
        Self::new_node(self.node.shape.clone(), self.node.data.clone(), flag, None)
    }

    /// Copy of the values with no history.
    pub fn detach(&self) -> Self {
        Self::new_node(self.node.shape.clone(), self.node.data.clone(), false, None)
    }

    /// Records an operation output. Without gradient-tracking parents (or
    /// inside [`no_grad`]) no history is kept.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<E>,
        parents: Vec<Tensor<E>>,
        backward: BackwardFn<E>,
    ) -> Result<Self> {
        debug_assert_eq!(numel_of(&shape), data.len(), "{op}: shape/data mismatch");
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op });
        }
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let grad_fn = track.then(|| GradFn { op, parents, backward });
        Ok(Self::new_node(shape, data, track, grad_fn))
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn ndim(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.node.data.clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.node.data.iter().map(|v| v.to_f64_lossy()).collect()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> E {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.node.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    /// Name of the recording operation, `None` for leaves.
    pub fn op_name(&self) -> Option<&'static str> {
        self.node.grad_fn.as_ref().map(|g| g.op)
    }

    pub fn grad(&self) -> Option<Vec<E>> {
        self.node.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().expect("grad lock") = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[E]) {
        let mut slot = self.node.grad.lock().expect("grad lock");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    pub(crate) fn grad_fn(&self) -> Option<&GradFn<E>> {
        self.node.grad_fn.as_ref()
    }

    /// Converts element type, dropping history and keeping the grad flag.
    pub fn cast<F: Element>(&self) -> Tensor<F> {
        let data = self.node.data.iter().map(|v| F::of(v.to_f64_lossy())).collect();
        Tensor::<F>::new_node(self.node.shape.clone(), data, self.node.requires_grad, None)
    }

    /// Same values with one element replaced; used by finite differences.
    pub(crate) fn with_value_at(&self, index: usize, value: E) -> Self {
        let mut data = self.node.data.clone();
        data[index] = value;
        Self::new_node(self.node.shape.clone(), data, self.node.requires_grad, None)
    }
}
