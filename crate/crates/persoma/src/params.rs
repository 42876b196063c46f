//! Named parameter store.
//!
//! All learned weights live here, addressed by [`ParamId`]. Models hold ids
//! rather than tensors, so a forward pass borrows the store immutably while
//! the optimizer mutates it between steps. A parameter's `trainable` flag is
//! the freeze mechanism: frozen parameters never get a gradient buffer and
//! are never touched by the optimizer.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Params<T> {
    items: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> Params<T> {
    pub fn new() -> Self {
        Params {
            items: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Registers a trainable parameter. Names must be unique; they double as
    /// checkpoint keys, so use `/`-separated prefixes (`decoder/`, `adapter/`,
    /// `lora/`, `task_prompt/`).
    pub fn register(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name '{name}'")));
        }
        let id = ParamId(self.items.len());
        self.by_name.insert(name.clone(), id);
        self.items.push(Param {
            name,
            value,
            grad: None,
            trainable: true,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.items[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.items[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.items[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.items[id.0].name
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.items.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.items.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.items[id.0].trainable = trainable;
    }

    /// Applies `trainable` to every parameter whose name starts with `prefix`.
    pub fn set_trainable_by_prefix(&mut self, prefix: &str, trainable: bool) {
        for p in &mut self.items {
            if p.name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    /// Accumulates a gradient contribution; allocates the buffer on first use.
    /// Rejected for frozen parameters, which must never see a grad.
    pub fn accumulate_grad(&mut self, id: ParamId, contrib: &Tensor<T>) -> Result<()> {
        let p = &mut self.items[id.0];
        if !p.trainable {
            return Err(Error::Contract(format!(
                "gradient routed to frozen parameter '{}'",
                p.name
            )));
        }
        match &mut p.grad {
            Some(g) => g.add_assign(contrib),
            None => {
                if contrib.shape() != p.value.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "accumulate_grad",
                        lhs: p.value.shape().to_vec(),
                        rhs: contrib.shape().to_vec(),
                    });
                }
                p.grad = Some(contrib.clone());
                Ok(())
            }
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.items {
            p.grad = None;
        }
    }

    /// Total element count, optionally restricted to trainable parameters.
    pub fn count_values(&self, trainable_only: bool) -> usize {
        self.items
            .iter()
            .filter(|p| !trainable_only || p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    /// Combined bit checksum over every parameter whose name starts with
    /// `prefix`, in registration order.
    pub fn checksum_by_prefix(&self, prefix: &str) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.items {
            if p.name.starts_with(prefix) {
                h ^= p.value.bit_checksum();
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_rejects_duplicates() {
        let mut ps = Params::<f64>::new();
        ps.register("w", Tensor::zeros(vec![2, 2])).unwrap();
        assert!(ps.register("w", Tensor::zeros(vec![2, 2])).is_err());
    }

    #[test]
    fn frozen_params_reject_gradients() {
        let mut ps = Params::<f64>::new();
        let id = ps.register("w", Tensor::zeros(vec![1, 2])).unwrap();
        ps.set_trainable(id, false);
        let g = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        assert!(ps.accumulate_grad(id, &g).is_err());
        assert!(ps.get(id).grad.is_none());
    }

    #[test]
    fn grad_accumulates_across_contributions() {
        let mut ps = Params::<f64>::new();
        let id = ps.register("w", Tensor::zeros(vec![1, 2])).unwrap();
        let g = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        ps.accumulate_grad(id, &g).unwrap();
        ps.accumulate_grad(id, &g).unwrap();
        assert_eq!(ps.get(id).grad.as_ref().unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn prefix_checksum_tracks_bit_changes() {
        let mut ps = Params::<f64>::new();
        let id = ps
            .register("decoder/w", Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap())
            .unwrap();
        ps.register("adapter/w", Tensor::matrix(1, 1, vec![3.0]).unwrap())
            .unwrap();
        let before = ps.checksum_by_prefix("decoder/");
        let flipped = f64::from_bits(ps.get(id).value.data()[0].to_bits() ^ 1);
        ps.get_mut(id).value.data_mut()[0] = flipped;
        assert_ne!(before, ps.checksum_by_prefix("decoder/"));
    }
}
