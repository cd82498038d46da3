//! Adam with per-parameter step counts.

use crate::matrix::Matrix;
use crate::params::{Gradients, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.00625,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamSlot<T> {
    pub m: Matrix<T>,
    pub v: Matrix<T>,
    pub steps: u64,
}

/// Optimiser state. Parameters that receive no gradient in a step are left
/// untouched and their moment estimates do not advance.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub slots: Vec<Option<AdamSlot<T>>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            slots: Vec::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) {
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        if self.slots.len() < store.len() {
            self.slots.resize_with(store.len(), || None);
        }
        for (id, g) in grads.iter() {
            let param = store.get_mut(id);
            let slot = self.slots[id.index()].get_or_insert_with(|| AdamSlot {
                m: Matrix::zeros(param.rows(), param.cols()),
                v: Matrix::zeros(param.rows(), param.cols()),
                steps: 0,
            });
            slot.steps += 1;
            let t = slot.steps as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            let (b1, b2) = (T::of(beta1), T::of(beta2));
            let step = T::of(lr / c1);
            let c2 = T::of(c2);
            let eps = T::of(eps);
            for (((p, m), v), &gi) in param
                .as_mut_slice()
                .iter_mut()
                .zip(slot.m.as_mut_slice())
                .zip(slot.v.as_mut_slice())
                .zip(g.as_slice())
            {
                *m = b1 * *m + (T::one() - b1) * gi;
                *v = b2 * *v + (T::one() - b2) * gi * gi;
                let v_hat = *v / c2;
                *p -= step * *m / (v_hat.sqrt() + eps);
            }
        }
    }
}
