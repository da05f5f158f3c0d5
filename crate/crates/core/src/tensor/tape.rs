use std::sync::Arc;

use super::ops::Op;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

pub(crate) struct Node {
    pub(crate) value: Arc<Tensor>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Ordered record of primitive ops for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so every op's inputs precede it.
/// A tape holds no global state; build one per forward pass.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: impl Into<Arc<Tensor>>) -> Var {
        self.push(value.into(), Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: impl Into<Arc<Tensor>>) -> Var {
        self.push(value.into(), Op::Leaf, false)
    }

    /// Same value as `v`, cut off from the gradient.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = Arc::clone(&self.nodes[v.0].value);
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shared_value(&self, v: Var) -> Arc<Tensor> {
        Arc::clone(&self.nodes[v.0].value)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Backpropagates from a one-element `loss`.
    ///
    /// Visits each recorded op at most once, newest first, summing gradient
    /// contributions where a value feeds several consumers.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.len() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        if loss_node.requires_grad {
            grads[loss.0] = Some(Tensor::full(loss_node.value.shape(), 1.0));
        }
        for id in (0..=loss.0).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(grad);
                continue;
            }
            self.backward_op(id, &grad, &mut grads);
            // Interior gradients are kept so callers can inspect them.
            grads[id] = Some(grad);
        }
        Ok(Gradients { grads })
    }

    /// Adds `delta` into the gradient slot of `v` when `v` is differentiable.
    pub(crate) fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when `v` does not influence the loss or does not require a gradient.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
