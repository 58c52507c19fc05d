//! Dense multi-dimensional array with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheaply clonable handle to an immutable value node. Ops
//! build a fresh dynamic graph on every forward pass; [`Tensor::backward`]
//! walks it in reverse topological order and accumulates gradients into
//! every reachable node that requires them. Tracked tensors are never
//! mutated by ops; the only sanctioned in-place writes are parameter
//! updates between steps (via [`Tensor::set_data`] / [`Tensor::data_mut`])
//! and gradient accumulation.

mod conv;
mod ops;

pub use conv::conv3d;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::TensorError;
use crate::rng::SeedRng;
use crate::scalar::Scalar;

type BackwardFn<S> = Box<dyn Fn(&[S])>;

pub(crate) struct Node<S: Scalar> {
    shape: Vec<usize>,
    data: RefCell<Vec<S>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<S>>>,
    parents: Vec<Tensor<S>>,
    backward: Option<BackwardFn<S>>,
}

/// Handle to a node in the computation graph.
pub struct Tensor<S: Scalar> {
    node: Rc<Node<S>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

impl<S: Scalar> std::fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={})",
            self.node.shape, self.node.requires_grad
        )
    }
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Run `f` without recording the computation graph. Values are unchanged;
/// only gradient tracking is suppressed. Used on pure-inference paths.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    GRAD_ENABLED.with(|g| {
        let prev = g.get();
        g.set(false);
        let out = f();
        g.set(prev);
        out
    })
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

pub fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<S: Scalar> Tensor<S> {
    // ── Constructors ──────────────────────────────────────────────────

    pub fn from_vec(shape: Vec<usize>, data: Vec<S>) -> Result<Self, TensorError> {
        let expected = numel_of(&shape);
        if expected != data.len() {
            return Err(TensorError::DataLength {
                op: "from_vec",
                expected,
                got: data.len(),
                shape,
            });
        }
        Ok(Self::leaf(shape, data, false))
    }

    /// Leaf with gradient tracking; the building block of [`crate::nn::Parameter`].
    pub fn with_grad(shape: Vec<usize>, data: Vec<S>) -> Result<Self, TensorError> {
        let expected = numel_of(&shape);
        if expected != data.len() {
            return Err(TensorError::DataLength {
                op: "with_grad",
                expected,
                got: data.len(),
                shape,
            });
        }
        Ok(Self::leaf(shape, data, true))
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel_of(&shape);
        Self::leaf(shape, vec![S::zero(); n], false)
    }

    pub fn full(shape: Vec<usize>, value: S) -> Self {
        let n = numel_of(&shape);
        Self::leaf(shape, vec![value; n], false)
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        Self::full(shape, S::one())
    }

    /// Rank-0 scalar.
    pub fn scalar(value: S) -> Self {
        Self::leaf(vec![], vec![value], false)
    }

    /// Constant tensor of elementwise standard-normal draws. Not tracked:
    /// gradients never flow through sampled noise.
    pub fn gaussian(shape: Vec<usize>, rng: &mut SeedRng) -> Self {
        let n = numel_of(&shape);
        let data: Vec<S> = (0..n).map(|_| S::from_f64(rng.normal())).collect();
        Self::leaf(shape, data, false)
    }

    fn leaf(shape: Vec<usize>, data: Vec<S>, requires_grad: bool) -> Self {
        Tensor {
            node: Rc::new(Node {
                shape,
                data: RefCell::new(data),
                requires_grad,
                grad: RefCell::new(None),
                parents: Vec::new(),
                backward: None,
            }),
        }
    }

    /// Build an op result node. `backward` receives the output gradient and
    /// accumulates contributions into the captured parents. When gradient
    /// tracking is off (or no parent requires it), the node is detached.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<S>,
        parents: Vec<Tensor<S>>,
        backward: impl Fn(&[S]) + 'static,
    ) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        let track = grad_enabled() && parents.iter().any(|p| p.node.requires_grad);
        if !track {
            return Self::leaf(shape, data, false);
        }
        Tensor {
            node: Rc::new(Node {
                shape,
                data: RefCell::new(data),
                requires_grad: true,
                grad: RefCell::new(None),
                parents,
                backward: Some(Box::new(backward)),
            }),
        }
    }

    // ── Accessors ─────────────────────────────────────────────────────

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.node.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<S>> {
        self.node.data.borrow()
    }

    /// Mutable access to the raw data. Reserved for parameter updates
    /// between steps; mutating a tensor inside a live graph invalidates
    /// gradients.
    pub fn data_mut(&self) -> RefMut<'_, Vec<S>> {
        self.node.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.node.data.borrow().clone()
    }

    /// The single element of a scalar (numel == 1) tensor.
    pub fn item(&self) -> Result<S, TensorError> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.node.shape.clone(),
            });
        }
        Ok(self.node.data.borrow()[0])
    }

    pub fn set_data(&self, data: &[S]) -> Result<(), TensorError> {
        if data.len() != self.numel() {
            return Err(TensorError::DataLength {
                op: "set_data",
                expected: self.numel(),
                got: data.len(),
                shape: self.node.shape.clone(),
            });
        }
        self.node.data.borrow_mut().copy_from_slice(data);
        Ok(())
    }

    pub fn grad(&self) -> Option<Vec<S>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    pub fn all_finite(&self) -> bool {
        self.node.data.borrow().iter().all(|v| v.is_finite())
    }

    /// Identity of the underlying node; two handles to the same node share
    /// data, gradient, and graph position.
    pub fn ptr_id(&self) -> usize {
        Rc::as_ptr(&self.node) as usize
    }

    pub(crate) fn accumulate_grad(&self, contrib: &[S]) {
        if !self.node.requires_grad {
            return;
        }
        debug_assert_eq!(contrib.len(), self.numel());
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi += *ci;
                }
            }
            None => *slot = Some(contrib.to_vec()),
        }
    }

    // ── Backward pass ─────────────────────────────────────────────────

    /// Reverse-mode gradient accumulation from a scalar loss.
    ///
    /// Intermediate gradients are recomputed from scratch on each call;
    /// leaf gradients accumulate additively across calls until
    /// [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.node.shape.clone(),
            });
        }
        let order = self.topo_order();
        // Fresh start for interior nodes; leaves keep accumulated grads.
        for t in &order {
            if t.node.backward.is_some() {
                *t.node.grad.borrow_mut() = None;
            }
        }
        self.accumulate_grad(&[S::one()]);
        if !self.node.requires_grad {
            // Detached scalar: nothing reachable requires gradients.
            return Ok(());
        }
        for t in order.iter().rev() {
            if let Some(f) = &t.node.backward {
                let guard = t.node.grad.borrow();
                if let Some(g) = guard.as_ref() {
                    f(g);
                }
            }
        }
        Ok(())
    }

    /// Iterative DFS post-order over the reachable graph (acyclic by
    /// construction).
    fn topo_order(&self) -> Vec<Tensor<S>> {
        let mut order: Vec<Tensor<S>> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        // Stack of (node, next child index to visit).
        let mut stack: Vec<(Tensor<S>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.ptr_id());
        while let Some((t, child_idx)) = stack.pop() {
            if child_idx < t.node.parents.len() {
                let child = t.node.parents[child_idx].clone();
                stack.push((t, child_idx + 1));
                if visited.insert(child.ptr_id()) {
                    stack.push((child, 0));
                }
            } else {
                order.push(t);
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        let err = Tensor::<f32>::from_vec(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::DataLength { .. }));
    }

    #[test]
    fn backward_of_sum_gives_ones() {
        let p = Tensor::<f64>::with_grad(vec![3], vec![1.0, -2.0, 5.0]).unwrap();
        let loss = p.sum();
        loss.backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let p = Tensor::<f64>::with_grad(vec![2], vec![1.0, 2.0]).unwrap();
        let loss = p.mul(&p).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let p = Tensor::<f64>::with_grad(vec![2], vec![3.0, 4.0]).unwrap();
        let loss = p.sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![2.0, 2.0]);
        p.zero_grad();
        loss.backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let p = Tensor::<f64>::with_grad(vec![2], vec![1.0, 2.0]).unwrap();
        let err = p.backward().unwrap_err();
        assert!(matches!(err, TensorError::NonScalarLoss { .. }));
    }

    #[test]
    fn shared_node_gets_both_contributions() {
        // loss = sum(x + x) -> dloss/dx = 2.
        let x = Tensor::<f64>::with_grad(vec![2], vec![1.0, 1.0]).unwrap();
        let loss = x.add(&x).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn no_grad_detaches() {
        let x = Tensor::<f64>::with_grad(vec![2], vec![1.0, 2.0]).unwrap();
        let y = no_grad(|| x.mul(&x).unwrap());
        assert!(!y.requires_grad());
        let z = x.mul(&x).unwrap();
        assert!(z.requires_grad());
        assert_eq!(y.to_vec(), z.to_vec());
    }
}
