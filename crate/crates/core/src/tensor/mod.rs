//! A small f32 tensor library with a reverse-mode tape.
//!
//! Tensors are row-major, immutable after creation (the optimizer mutates
//! leaf parameters through [`Tensor::set_data`] between steps), and carry an
//! optional gradient accumulator. Operations record their inputs and a
//! backward closure on the output; [`Tensor::backward`] walks the recorded
//! graph in reverse topological order. Everything runs single-threaded and
//! in a fixed order, so identical inputs give bit-identical results.
//!
//! Matrix multiplies, convolutions, and reductions accumulate in f64 before
//! rounding back to f32; that keeps oracle comparisons stable without
//! changing determinism.

mod attention;
mod conv;
mod elementwise;
mod gradcheck;
mod matmul;
mod reduce;
mod shape_ops;

pub use attention::{linear_attention, softmax_attention};
pub use gradcheck::{finite_diff_check, CoordSelection, GradCheckReport};

use std::cell::{Cell, RefCell};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::rng::Rng;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static NO_GRAD_DEPTH: Cell<u32> = const { Cell::new(0) };
    static CHECKED_DIV: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with gradient recording disabled. Ops executed inside produce
/// plain values with no graph, which is the fast path for evaluation.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    NO_GRAD_DEPTH.with(|d| d.set(d.get() + 1));
    let out = f();
    NO_GRAD_DEPTH.with(|d| d.set(d.get() - 1));
    out
}

pub(crate) fn grad_enabled() -> bool {
    NO_GRAD_DEPTH.with(|d| d.get()) == 0
}

/// Division rejects divisors with magnitude below 1e-12 while checked mode
/// is on (the default). Returns the previous value.
pub fn set_checked_div(on: bool) -> bool {
    CHECKED_DIV.with(|c| c.replace(on))
}

pub(crate) fn checked_div() -> bool {
    CHECKED_DIV.with(|c| c.get())
}

/// Backward closure: (output data, output grad, parents).
pub(crate) type BackwardFn = Box<dyn Fn(&[f32], &[f32], &[Tensor])>;

pub(crate) struct TensorInner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f32>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f32>>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
    op_name: &'static str,
}

#[derive(Clone)]
pub struct Tensor {
    inner: Rc<TensorInner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("op", &self.inner.op_name)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

impl Tensor {
    fn new_inner(
        shape: Vec<usize>,
        data: Vec<f32>,
        requires_grad: bool,
        parents: Vec<Tensor>,
        backward: Option<BackwardFn>,
        op_name: &'static str,
    ) -> Tensor {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor {
            inner: Rc::new(TensorInner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                requires_grad,
                grad: RefCell::new(None),
                parents,
                backward,
                op_name,
            }),
        }
    }

    /// Leaf tensor without gradient tracking.
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        if numel_of(shape) != data.len() {
            return Err(Error::shape(format!(
                "from_vec: shape {:?} wants {} values, got {}",
                shape,
                numel_of(shape),
                data.len()
            )));
        }
        Ok(Tensor::new_inner(shape.to_vec(), data, false, vec![], None, "leaf"))
    }

    /// Leaf parameter: gradients accumulate here across backward calls.
    pub fn param_from_vec(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        if numel_of(shape) != data.len() {
            return Err(Error::shape(format!(
                "param_from_vec: shape {:?} wants {} values, got {}",
                shape,
                numel_of(shape),
                data.len()
            )));
        }
        Ok(Tensor::new_inner(shape.to_vec(), data, true, vec![], None, "param"))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::new_inner(shape.to_vec(), vec![0.0; numel_of(shape)], false, vec![], None, "leaf")
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Tensor {
        Tensor::new_inner(shape.to_vec(), vec![value; numel_of(shape)], false, vec![], None, "leaf")
    }

    pub fn scalar(value: f32) -> Tensor {
        Tensor::new_inner(vec![], vec![value], false, vec![], None, "leaf")
    }

    pub fn randn(shape: &[usize], rng: &mut Rng) -> Tensor {
        let mut data = vec![0.0; numel_of(shape)];
        rng.fill_normal(&mut data);
        Tensor::new_inner(shape.to_vec(), data, false, vec![], None, "leaf")
    }

    pub fn randn_param(shape: &[usize], rng: &mut Rng) -> Tensor {
        let mut data = vec![0.0; numel_of(shape)];
        rng.fill_normal(&mut data);
        Tensor::new_inner(shape.to_vec(), data, true, vec![], None, "param")
    }

    pub fn uniform(shape: &[usize], lo: f32, hi: f32, rng: &mut Rng) -> Tensor {
        let data = (0..numel_of(shape)).map(|_| rng.uniform_in(lo, hi)).collect();
        Tensor::new_inner(shape.to_vec(), data, false, vec![], None, "leaf")
    }

    /// Output of an operation. The graph is recorded only when gradients are
    /// enabled and some parent wants them.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f32>,
        parents: Vec<Tensor>,
        op_name: &'static str,
        backward: impl Fn(&[f32], &[f32], &[Tensor]) + 'static,
    ) -> Tensor {
        let track = grad_enabled() && parents.iter().any(|p| p.inner.requires_grad);
        if track {
            Tensor::new_inner(shape, data, true, parents, Some(Box::new(backward)), op_name)
        } else {
            Tensor::new_inner(shape, data, false, vec![], None, op_name)
        }
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

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn op_name(&self) -> &'static str {
        self.inner.op_name
    }

    pub(crate) fn id(&self) -> u64 {
        self.inner.id
    }

    pub(crate) fn data_ref(&self) -> std::cell::Ref<'_, Vec<f32>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.inner.data.borrow().clone()
    }

    /// Scalar extraction; errors unless the tensor holds exactly one value.
    pub fn item(&self) -> Result<f32> {
        if self.numel() != 1 {
            return Err(Error::shape(format!(
                "item() on tensor of shape {:?}",
                self.inner.shape
            )));
        }
        Ok(self.inner.data.borrow()[0])
    }

    /// Replaces the stored values. Only sensible on leaves (the optimizer
    /// path); the recorded graph of past steps is never re-read.
    pub fn set_data(&self, values: &[f32]) -> Result<()> {
        let mut data = self.inner.data.borrow_mut();
        if data.len() != values.len() {
            return Err(Error::shape(format!(
                "set_data: tensor holds {} values, got {}",
                data.len(),
                values.len()
            )));
        }
        data.copy_from_slice(values);
        Ok(())
    }

    /// Detached copy of the values as a fresh leaf.
    pub fn detach(&self) -> Tensor {
        Tensor::new_inner(self.inner.shape.clone(), self.to_vec(), false, vec![], None, "leaf")
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.grad.borrow().clone()
    }

    /// Clears the gradient accumulator.
    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f32]) {
        if !self.inner.requires_grad {
            return;
        }
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => {
                *slot = Some(delta.to_vec());
            }
        }
    }

    pub(crate) fn accumulate_grad_f64(&self, delta: &[f64]) {
        if !self.inner.requires_grad {
            return;
        }
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += *di as f32;
                }
            }
            None => {
                *slot = Some(delta.iter().map(|&d| d as f32).collect());
            }
        }
    }

    /// Reverse-mode sweep from a scalar. Leaf gradients accumulate across
    /// calls until [`Tensor::zero_grad`]; intermediate gradients are scratch
    /// and reset on every call.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::shape(format!(
                "backward() needs a scalar, got shape {:?}",
                self.inner.shape
            )));
        }
        if !self.inner.requires_grad {
            return Err(Error::shape(
                "backward() on a tensor that does not require gradients".to_string(),
            ));
        }

        // Post-order DFS over the recorded graph, gradient-carrying nodes only.
        let mut topo: Vec<Tensor> = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        while let Some((node, child)) = stack.pop() {
            if child == 0 {
                if !visited.insert(node.inner.id) {
                    continue;
                }
            }
            let parents = &node.inner.parents;
            let mut next = child;
            while next < parents.len() && visited.contains(&parents[next].inner.id) {
                next += 1;
            }
            if next < parents.len() {
                let p = parents[next].clone();
                stack.push((node, next + 1));
                if p.inner.requires_grad {
                    stack.push((p, 0));
                }
            } else {
                topo.push(node);
            }
        }

        for node in &topo {
            if node.inner.backward.is_some() {
                *node.inner.grad.borrow_mut() = Some(vec![0.0; node.numel()]);
            } else if node.inner.grad.borrow().is_none() {
                *node.inner.grad.borrow_mut() = Some(vec![0.0; node.numel()]);
            }
        }
        if let Some(g) = self.inner.grad.borrow_mut().as_mut() {
            g[0] += 1.0;
        }

        for node in topo.iter().rev() {
            if let Some(backward) = &node.inner.backward {
                let grad = node.inner.grad.borrow().as_ref().cloned().unwrap_or_default();
                let data = node.inner.data.borrow();
                backward(&data, &grad, &node.inner.parents);
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.borrow().iter().all(|v| v.is_finite())
    }
}
