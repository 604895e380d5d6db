//! The gradient tape: operation recording and reverse replay.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::cell::RefCell;

use super::{Tensor, TensorError};
use crate::element::Element;

/// Per-input gradient contributions of one recorded operation.
type BackwardFn<E> = Box<dyn Fn(&Tensor<E>) -> Vec<Option<Tensor<E>>>>;

struct Node<E: Element> {
    inputs: Vec<usize>,
    backward: Option<BackwardFn<E>>,
    needs_grad: bool,
}

struct TapeInner<E: Element> {
    nodes: Vec<Node<E>>,
    grads: Vec<Option<Tensor<E>>>,
    consumed: bool,
}

/// An ordered record of operations for one forward pass.
///
/// Nodes are appended strictly after their inputs, so replaying the list in
/// reverse index order is a topological replay of the chain rule. A tape is
/// single-threaded; batch parallelism runs one tape per sample.
pub struct Tape<E: Element = f64> {
    inner: RefCell<TapeInner<E>>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(TapeInner {
                nodes: Vec::new(),
                grads: Vec::new(),
                consumed: false,
            }),
        }
    }

    /// Enrolls a leaf tensor that should receive a gradient.
    pub fn var(&self, value: Tensor<E>) -> Var<'_, E> {
        self.push(value, Vec::new(), None, true)
    }

    /// Enrolls a leaf tensor that participates in the forward pass only.
    pub fn constant(&self, value: Tensor<E>) -> Var<'_, E> {
        self.push(value, Vec::new(), None, false)
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Releases all recorded nodes and gradients. Taking `&mut self`
    /// guarantees no `Var` from the previous pass is still alive.
    pub fn clear(&mut self) {
        let inner = self.inner.get_mut();
        inner.nodes.clear();
        inner.grads.clear();
        inner.consumed = false;
    }

    fn push(
        &self,
        value: Tensor<E>,
        inputs: Vec<usize>,
        backward: Option<BackwardFn<E>>,
        needs_grad: bool,
    ) -> Var<'_, E> {
        let mut inner = self.inner.borrow_mut();
        let index = inner.nodes.len();
        inner.nodes.push(Node {
            inputs,
            backward,
            needs_grad,
        });
        inner.grads.push(None);
        Var {
            tape: self,
            index,
            value,
        }
    }

    /// Records an operation node. `backward` maps the upstream gradient to
    /// one contribution per input, in the order given. Dropped entirely when
    /// no input requires a gradient.
    pub(crate) fn record<'t>(
        &'t self,
        value: Tensor<E>,
        inputs: &[&Var<'t, E>],
        backward: BackwardFn<E>,
    ) -> Var<'t, E> {
        for v in inputs {
            debug_assert!(
                core::ptr::eq(v.tape, self),
                "operation mixes vars from different tapes"
            );
        }
        let needs_grad = {
            let inner = self.inner.borrow();
            inputs.iter().any(|v| inner.nodes[v.index].needs_grad)
        };
        let ids = inputs.iter().map(|v| v.index).collect();
        let rule = if needs_grad { Some(backward) } else { None };
        self.push(value, ids, rule, needs_grad)
    }

    /// Reverse pass from a scalar root: populates the gradient of every
    /// participant on a path to the root. Errs on non-scalar or detached
    /// roots, and when called twice without rebuilding the forward graph.
    pub fn backward(&self, root: &Var<'_, E>) -> Result<(), TensorError> {
        debug_assert!(core::ptr::eq(root.tape, self));
        if !root.value.is_scalar() {
            return Err(TensorError::NonScalarRoot {
                shape: root.value.shape().to_vec(),
            });
        }
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(TensorError::TapeConsumed);
        }
        if !inner.nodes[root.index].needs_grad {
            return Err(TensorError::DetachedRoot);
        }
        inner.consumed = true;
        inner.grads[root.index] = Some(Tensor::ones(root.value.shape()));

        for i in (0..=root.index).rev() {
            if inner.grads[i].is_none() {
                continue;
            }
            let Some(rule) = inner.nodes[i].backward.take() else {
                continue;
            };
            let grad_out = inner.grads[i].clone().expect("grad present");
            let contributions = rule(&grad_out);
            debug_assert_eq!(contributions.len(), inner.nodes[i].inputs.len());
            for (slot, contribution) in inner.nodes[i].inputs.clone().iter().zip(contributions) {
                let Some(c) = contribution else { continue };
                if !inner.nodes[*slot].needs_grad {
                    continue;
                }
                inner.grads[*slot] = Some(match inner.grads[*slot].take() {
                    Some(acc) => acc.add_same_shape(&c),
                    None => c,
                });
            }
        }
        Ok(())
    }

    fn grad_of(&self, index: usize) -> Option<Tensor<E>> {
        self.inner.borrow().grads[index].clone()
    }

    fn requires_grad_of(&self, index: usize) -> bool {
        self.inner.borrow().nodes[index].needs_grad
    }
}

/// A tensor enrolled on a tape.
///
/// Carries the forward value; `requires_grad` and the populated gradient are
/// looked up on the owning tape. Clones are cheap (the value buffer is
/// shared).
pub struct Var<'t, E: Element = f64> {
    tape: &'t Tape<E>,
    index: usize,
    value: Tensor<E>,
}

impl<'t, E: Element> Clone for Var<'t, E> {
    fn clone(&self) -> Self {
        Self {
            tape: self.tape,
            index: self.index,
            value: self.value.clone(),
        }
    }
}

impl<'t, E: Element> core::fmt::Debug for Var<'t, E> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Var")
            .field("index", &self.index)
            .field("value", &self.value)
            .finish()
    }
}

impl<'t, E: Element> Var<'t, E> {
    pub fn value(&self) -> &Tensor<E> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn tape(&self) -> &'t Tape<E> {
        self.tape
    }

    /// True when a backward pass will deposit a gradient here.
    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.index)
    }

    /// The gradient populated by the last backward pass, if any.
    pub fn grad(&self) -> Option<Tensor<E>> {
        self.tape.grad_of(self.index)
    }

    /// A constant copy of this value on the same tape: forward-identical,
    /// but gradients do not flow through it.
    pub fn detach(&self) -> Var<'t, E> {
        self.tape.constant(self.value.clone())
    }

    pub(crate) fn record(
        &self,
        value: Tensor<E>,
        inputs: &[&Var<'t, E>],
        backward: BackwardFn<E>,
    ) -> Var<'t, E> {
        self.tape.record(value, inputs, backward)
    }
}
