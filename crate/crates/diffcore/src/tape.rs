//! Reverse-mode differentiation over tensor-valued operations.
//!
//! A [`Tape`] records every operation whose inputs include a tracked value.
//! Values that do not depend on a tracked leaf never touch the tape, and with
//! recording switched off nothing is stored at all, so inference passes leave
//! the tape empty.
//!
//! ```
//! use diffcore::{Tape, Tensor};
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap());
//! let loss = x.square().sum();
//! tape.backward(&loss).unwrap();
//! assert_eq!(tape.grad(&x).unwrap().data(), &[2.0, -4.0, 1.0]);
//! ```

use std::cell::{Cell, RefCell};

use crate::error::{DiffError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    parents: Vec<Option<usize>>,
    backward: Option<BackwardFn<T>>,
    grad: Option<Tensor<T>>,
}

/// Operation recorder. One tape per forward/backward pass.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: Cell<bool>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// A value on a tape: the tensor plus, when tracked, its node id.
#[derive(Clone)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    value: Tensor<T>,
    node: Option<usize>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), recording: Cell::new(true) }
    }

    /// A tape that never records; every op evaluates eagerly.
    pub fn inference() -> Self {
        let tape = Self::new();
        tape.recording.set(false);
        tape
    }

    pub fn is_recording(&self) -> bool {
        self.recording.get()
    }

    pub fn set_recording(&self, on: bool) {
        self.recording.set(on);
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A tracked leaf: gradients flow into it and accumulate in its slot.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        if !self.recording.get() {
            return self.constant(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { parents: Vec::new(), backward: None, grad: None });
        Var { tape: self, value, node: Some(nodes.len() - 1) }
    }

    /// An untracked value; it never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        Var { tape: self, value, node: None }
    }

    pub fn scalar(&self, value: T) -> Var<'_, T> {
        self.constant(Tensor::scalar(value))
    }

    /// Records an op. `make` receives, per parent, whether that parent needs a
    /// gradient and returns the vector-Jacobian product closure.
    pub(crate) fn record<'t, F>(&'t self, value: Tensor<T>, parents: &[&Var<'t, T>], make: F) -> Var<'t, T>
    where
        F: FnOnce(Vec<bool>) -> BackwardFn<T>,
    {
        let ids: Vec<Option<usize>> = parents.iter().map(|p| p.node).collect();
        if !self.recording.get() || ids.iter().all(Option::is_none) {
            return self.constant(value);
        }
        let needs = ids.iter().map(Option::is_some).collect();
        let backward = make(needs);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { parents: ids, backward: Some(backward), grad: None });
        Var { tape: self, value, node: Some(nodes.len() - 1) }
    }

    /// Propagates d(loss)/d(node) back to every tracked leaf and adds the
    /// result to the leaves' gradient slots. Calling it again without
    /// [`Tape::zero_grad`] accumulates.
    pub fn backward(&self, loss: &Var<'_, T>) -> Result<()> {
        if loss.value.len() != 1 {
            return Err(DiffError::NotScalar(loss.value.shape().to_vec()));
        }
        let root = loss.node.ok_or(DiffError::NoGraph)?;
        let mut adjoint: Vec<Option<Tensor<T>>> = vec![None; root + 1];
        adjoint[root] = Some(Tensor::full(loss.value.shape().to_vec(), T::one()));
        let mut leaf_grads = Vec::new();
        {
            let nodes = self.nodes.borrow();
            for id in (0..=root).rev() {
                let Some(g) = adjoint[id].take() else {
                    continue;
                };
                let node = &nodes[id];
                match &node.backward {
                    None => leaf_grads.push((id, g)),
                    Some(bw) => {
                        let grads = bw(&g);
                        for (parent, pg) in node.parents.iter().zip(grads) {
                            if let (Some(p), Some(pg)) = (parent, pg) {
                                match &mut adjoint[*p] {
                                    Some(acc) => acc.add_assign(&pg)?,
                                    slot @ None => *slot = Some(pg),
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_grads {
            match &mut nodes[id].grad {
                Some(acc) => acc.add_assign(&g)?,
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a tracked leaf, if any reached it.
    pub fn grad(&self, var: &Var<'_, T>) -> Option<Tensor<T>> {
        let id = var.node?;
        self.nodes.borrow()[id].grad.clone()
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// The value as an untracked constant on the same tape.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.constant(self.value.clone())
    }

    pub(crate) fn same_tape(&self, other: &Var<'t, T>) {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }
}
