//! Bias-corrected Adam.
//!
//! Moment buffers are keyed by parameter id and allocated lazily; the step
//! counter is shared across the optimized set, advancing by exactly one per
//! update call.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, Params};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
struct Moments<T> {
    m: Tensor<T>,
    v: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    step: u64,
    moments: HashMap<ParamId, Moments<T>>,
}

impl<T: Scalar> Adam<T> {
    /// lr 0.001, beta1 0.9, beta2 0.999, eps 1e-8.
    pub fn new(lr: T) -> Self {
        Adam {
            lr,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            epsilon: T::from_f64(1e-8),
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every trainable parameter, in registration order.
    pub fn step_trainable(&mut self, params: &mut Params<T>) -> Result<()> {
        let targets: Vec<ParamId> = params
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(id, _)| id)
            .collect();
        self.step(params, &targets)
    }

    /// One update over an explicit parameter set. Every target must be
    /// trainable and must have a populated gradient; gradients are cleared
    /// after the update.
    pub fn step(&mut self, params: &mut Params<T>, targets: &[ParamId]) -> Result<()> {
        self.step += 1;
        let t = self.step;
        let bc1 = T::one() - self.beta1.powi(t as i32);
        let bc2 = T::one() - self.beta2.powi(t as i32);

        for &id in targets {
            let p = params.get_mut(id);
            if !p.trainable {
                return Err(Error::Contract(format!(
                    "adam step over frozen parameter '{}'",
                    p.name
                )));
            }
            let grad = match p.grad.take() {
                Some(g) => g,
                None => return Err(Error::MissingGrad(p.name.clone())),
            };
            let slot = self.moments.entry(id).or_insert_with(|| Moments {
                m: Tensor::zeros(p.value.shape().to_vec()),
                v: Tensor::zeros(p.value.shape().to_vec()),
            });
            if slot.m.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.value.shape().to_vec(),
                    rhs: slot.m.shape().to_vec(),
                });
            }
            let one = T::one();
            for (((val, g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(slot.m.data_mut())
                .zip(slot.v.data_mut())
            {
                *m = self.beta1 * *m + (one - self.beta1) * *g;
                *v = self.beta2 * *v + (one - self.beta2) * *g * *g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *val -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: Vec<f64>) -> (Params<f64>, ParamId) {
        let mut ps = Params::new();
        let n = value.len();
        let id = ps.register("w", Tensor::matrix(1, n, value).unwrap()).unwrap();
        (ps, id)
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let (mut ps, id) = one_param(vec![1.5, -0.5]);
        ps.accumulate_grad(id, &Tensor::zeros(vec![1, 2])).unwrap();
        let mut adam = Adam::new(0.001);
        adam.step(&mut ps, &[id]).unwrap();
        assert_eq!(ps.value(id).data(), &[1.5, -0.5]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let (mut ps, id) = one_param(vec![0.0, 0.0]);
        ps.accumulate_grad(id, &Tensor::matrix(1, 2, vec![0.3, -7.0]).unwrap())
            .unwrap();
        let mut adam = Adam::new(0.001);
        adam.step(&mut ps, &[id]).unwrap();
        // Bias-corrected first step: delta = lr * g / (|g| + eps) ~ lr * sign(g).
        let w = ps.value(id).data();
        assert!((w[0] + 0.001).abs() < 1e-6, "{w:?}");
        assert!((w[1] - 0.001).abs() < 1e-6, "{w:?}");
    }

    #[test]
    fn step_counter_makes_successive_calls_differ() {
        let run = |steps: usize| {
            let (mut ps, id) = one_param(vec![1.0]);
            let mut adam = Adam::new(0.01);
            for _ in 0..steps {
                ps.accumulate_grad(id, &Tensor::matrix(1, 1, vec![1.0]).unwrap())
                    .unwrap();
                adam.step(&mut ps, &[id]).unwrap();
            }
            (ps.value(id).data()[0], adam.step_count())
        };
        let (w1, t1) = run(1);
        let (w2, t2) = run(2);
        assert_eq!(t1, 1);
        assert_eq!(t2, 2);
        assert_ne!(w1, w2);
        assert_ne!(w2 - w1, w1 - 1.0, "second update must differ from the first");
    }

    #[test]
    fn missing_grad_names_the_parameter() {
        let (mut ps, id) = one_param(vec![1.0]);
        let mut adam = Adam::new(0.001);
        let err = adam.step(&mut ps, &[id]).unwrap_err().to_string();
        assert!(err.contains("'w'"), "{err}");
    }

    #[test]
    fn grads_cleared_after_step() {
        let (mut ps, id) = one_param(vec![1.0]);
        ps.accumulate_grad(id, &Tensor::matrix(1, 1, vec![0.5]).unwrap())
            .unwrap();
        let mut adam = Adam::new(0.001);
        adam.step(&mut ps, &[id]).unwrap();
        assert!(ps.get(id).grad.is_none());
    }
}
