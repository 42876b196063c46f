//! Reverse-mode differentiation tape.
//!
//! Operations append nodes in topological order; [`Tape::backward`] walks the
//! recording in exact reverse order, multiplying upstream gradients through
//! each node's local-gradient closure. Leaf gradients are retained on the
//! tape (for `var` leaves) and accumulated into the parameter store (for
//! `param` leaves). Untracked nodes never allocate a gradient.
//!
//! One tape per training step; tapes are not shared across threads.

use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::params::{ParamId, Params};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

pub(crate) type BackFn<T> = Box<dyn Fn(&Tensor<T>) -> Result<Vec<(NodeId, Tensor<T>)>>>;

pub(crate) struct Node<T> {
    pub value: Rc<Tensor<T>>,
    pub requires_grad: bool,
    pub param: Option<ParamId>,
    pub back: Option<BackFn<T>>,
}

pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, NodeId>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub(crate) fn rc(&self, id: NodeId) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes[id.0].value)
    }

    pub(crate) fn req(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub(crate) fn push(
        &mut self,
        value: Tensor<T>,
        requires_grad: bool,
        param: Option<ParamId>,
        back: Option<BackFn<T>>,
    ) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            param,
            back,
        });
        id
    }

    /// Untracked input; gradients never flow into it.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, false, None, None)
    }

    /// Tracked leaf whose gradient is retained on the tape after backward.
    pub fn var(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, true, None, None)
    }

    /// Leaf bound to a store parameter; tracked iff the parameter is
    /// trainable. Repeated requests for the same parameter return the same
    /// node, so gradient contributions from every use site accumulate.
    pub fn param(&mut self, params: &Params<T>, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        let p = params.get(id);
        let node = self.push(p.value.clone(), p.trainable, Some(id), None);
        self.param_nodes.insert(id, node);
        node
    }

    /// Retained gradient of a leaf, available after [`Tape::backward`].
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Reverse pass from a scalar loss. Populates retained leaf gradients and
    /// accumulates parameter gradients into `params`.
    pub fn backward(&mut self, loss: NodeId, params: &mut Params<T>) -> Result<()> {
        let loss_val = self.value(loss);
        if !loss_val.is_scalar() {
            return Err(Error::Contract(format!(
                "backward expects a scalar loss, got shape {:?}",
                loss_val.shape()
            )));
        }
        if !self.req(loss) {
            return Err(Error::Contract(
                "backward called on an untracked value; nothing to differentiate".into(),
            ));
        }

        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(n);
        grads.resize_with(n, || None);
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..n).rev() {
            if grads[idx].is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            match &self.nodes[idx].back {
                Some(back) => {
                    // Interior node: propagate and free its gradient.
                    let g = grads[idx].take().expect("checked above");
                    for (src, contrib) in back(&g)? {
                        if !self.nodes[src.0].requires_grad {
                            continue;
                        }
                        match &mut grads[src.0] {
                            Some(acc) => acc.add_assign(&contrib)?,
                            slot => *slot = Some(contrib),
                        }
                    }
                }
                None => {
                    // Leaf: retain, and mirror into the store when bound.
                    if let Some(pid) = self.nodes[idx].param {
                        let g = grads[idx].as_ref().expect("checked above");
                        params.accumulate_grad(pid, g)?;
                    }
                }
            }
        }

        self.grads = grads;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f64>::new();
        let x = tape.var(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let mut ps = Params::new();
        assert!(tape.backward(x, &mut ps).is_err());
    }

    #[test]
    fn sum_of_leaf_yields_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.var(Tensor::matrix(2, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let s = tape.sum(x);
        let mut ps = Params::new();
        tape.backward(s, &mut ps).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn quadratic_grad_is_two_x() {
        let mut tape = Tape::<f64>::new();
        let x = tape.var(Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap());
        let sq = tape.hadamard(x, x).unwrap();
        let s = tape.sum(sq);
        let mut ps = Params::new();
        tape.backward(s, &mut ps).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn frozen_param_gets_no_grad_buffer() {
        let mut ps = Params::new();
        let frozen = ps
            .register("frozen", Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        let live = ps
            .register("live", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        ps.set_trainable(frozen, false);

        let mut tape = Tape::new();
        let a = tape.param(&ps, frozen);
        let b = tape.param(&ps, live);
        let c = tape.matmul(a, b).unwrap();
        let s = tape.sum(c);
        tape.backward(s, &mut ps).unwrap();

        assert!(ps.get(frozen).grad.is_none());
        assert!(ps.get(live).grad.is_some());
    }

    #[test]
    fn repeated_param_leaf_accumulates_uses() {
        let mut ps = Params::new();
        let w = ps
            .register("w", Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap())
            .unwrap();
        let mut tape = Tape::new();
        let a = tape.param(&ps, w);
        let b = tape.param(&ps, w);
        assert_eq!(a, b);
        let c = tape.add(a, b).unwrap();
        let s = tape.sum(c);
        tape.backward(s, &mut ps).unwrap();
        assert_eq!(ps.get(w).grad.as_ref().unwrap().data(), &[2.0, 2.0]);
    }
}
