//! Dense `f64` tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is a cheap reference-counted handle. Operations on tensors
//! that require gradients record the producing [`ops::Op`] on the result, so
//! the computation graph is the set of handles reachable from a loss.
//! [`backward`] orders that graph into a [`Trace`] and replays the adjoints,
//! accumulating into the `grad` slot of every leaf that requires a gradient.

mod autograd;
mod gradcheck;
pub mod kernels;
mod ops;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use autograd::{backward, is_grad_enabled, NoGradGuard, Trace};
pub use gradcheck::{grad_check, GradCheckReport};
pub(crate) use ops::Op;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

pub(crate) struct Node {
    id: usize,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: Cell<bool>,
    op: Option<Op>,
}

#[derive(Clone)]
pub struct Tensor {
    node: Rc<Node>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.node.id)
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.requires_grad())
            .field("op", &self.node.op.as_ref().map(Op::name))
            .finish()
    }
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Option<Op>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            node: Rc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: Cell::new(requires_grad),
                op,
            }),
        }
    }

    /// Constant leaf. Fails when `shape` has a zero dimension or disagrees
    /// with `data.len()`.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Parameter(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("new", shape, &[data.len()]));
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Trainable leaf.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        t.node.requires_grad.set(true);
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::build(shape.to_vec(), vec![value; n], false, None)
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(Vec::new(), vec![value], false, None)
    }

    /// Result of a recorded operation. The op is dropped (and the result is a
    /// constant) when no input needs a gradient or recording is disabled.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, op: Op) -> Self {
        let record = is_grad_enabled() && op.inputs().iter().any(|t| t.requires_grad());
        Self::build(shape, data, record, record.then_some(op))
    }

    pub fn id(&self) -> usize {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.data.borrow().len()
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.node.data.borrow()
    }

    /// In-place access to the values. Intended for leaves (optimizer updates,
    /// finite-difference perturbation); mutating a recorded intermediate
    /// invalidates adjoints computed from it.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.node.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.node.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let d = self.node.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.shape());
        d[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad.get()
    }

    pub fn is_leaf(&self) -> bool {
        self.node.op.is_none()
    }

    /// Toggle gradient tracking on a leaf (freezing / unfreezing a parameter).
    pub fn set_requires_grad(&self, flag: bool) -> Result<()> {
        if !self.is_leaf() {
            return Err(Error::Usage(
                "requires_grad can only be changed on leaf tensors".into(),
            ));
        }
        self.node.requires_grad.set(flag);
        Ok(())
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.grad.borrow().clone()
    }

    pub fn grad_ref(&self) -> Ref<'_, Option<Vec<f64>>> {
        self.node.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    pub(crate) fn op(&self) -> Option<&Op> {
        self.node.op.as_ref()
    }

    /// Constant copy cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::build(self.shape().to_vec(), self.to_vec(), false, None)
    }

    /// Leaf with entries drawn from `Uniform(lo, hi)`.
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Self::build(shape.to_vec(), data, false, None)
    }

    /// Leaf with entries drawn from `N(0, std²)`.
    pub fn normal(shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self::build(shape.to_vec(), data, false, None)
    }

    /// Two handles to the same storage.
    pub fn same_storage(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.node, &other.node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_element_count() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(&[2, 3], vec![0.0; 5]),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            Tensor::new(&[0, 3], vec![]),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn grad_slot_matches_data_length_after_backward() {
        let x = Tensor::param(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let loss = x.mul(&x).unwrap().sum();
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap().len(), x.numel());
    }

    #[test]
    fn intermediate_results_are_not_leaves() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.scale(2.0);
        assert!(!y.is_leaf());
        assert!(y.set_requires_grad(false).is_err());
        let c = Tensor::ones(&[2]).scale(3.0);
        assert!(c.is_leaf() && !c.requires_grad());
    }
}
