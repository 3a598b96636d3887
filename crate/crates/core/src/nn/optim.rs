//! First-order optimisers over a parameter store.
//!
//! Updates touch trainable tensors only; frozen parameters keep their
//! values and accumulate no moment state.

use super::params::{GradSet, ParamStore};
use super::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Adam {
        Adam {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            step: 0,
            m: (0..store.len()).map(|_| None).collect(),
            v: (0..store.len()).map(|_| None).collect(),
        }
    }

    pub fn apply(&mut self, store: &mut ParamStore, grads: &GradSet) {
        if self.m.len() < store.len() {
            self.m.resize_with(store.len(), || None);
            self.v.resize_with(store.len(), || None);
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for idx in 0..store.len() {
            if !store.is_trainable(idx) {
                continue;
            }
            let Some(g) = grads.get(idx) else { continue };
            let (rows, cols) = store.by_index(idx).shape();
            let m = self.m[idx].get_or_insert_with(|| Tensor::zeros(rows, cols));
            let v = self.v[idx].get_or_insert_with(|| Tensor::zeros(rows, cols));
            let w = store.by_index_mut(idx);
            for e in 0..w.len() {
                let ge = g.data[e];
                m.data[e] = self.beta1 * m.data[e] + (1.0 - self.beta1) * ge;
                v.data[e] = self.beta2 * v.data[e] + (1.0 - self.beta2) * ge * ge;
                let m_hat = m.data[e] / bc1;
                let v_hat = v.data[e] / bc2;
                w.data[e] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn new(lr: f64) -> Sgd {
        Sgd { lr }
    }

    pub fn apply(&mut self, store: &mut ParamStore, grads: &GradSet) {
        for idx in 0..store.len() {
            if !store.is_trainable(idx) {
                continue;
            }
            let Some(g) = grads.get(idx) else { continue };
            let w = store.by_index_mut(idx);
            for e in 0..w.len() {
                w.data[e] -= self.lr * g.data[e];
            }
        }
    }
}

pub enum Optimizer {
    Adam(Adam),
    Sgd(Sgd),
}

impl Optimizer {
    pub fn adam(store: &ParamStore, lr: f64) -> Optimizer {
        Optimizer::Adam(Adam::new(store, lr))
    }

    pub fn sgd(lr: f64) -> Optimizer {
        Optimizer::Sgd(Sgd::new(lr))
    }

    pub fn apply(&mut self, store: &mut ParamStore, grads: &GradSet) {
        match self {
            Optimizer::Adam(o) => o.apply(store, grads),
            Optimizer::Sgd(o) => o.apply(store, grads),
        }
    }

    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::Adam(o) => o.lr,
            Optimizer::Sgd(o) => o.lr,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        match self {
            Optimizer::Adam(o) => o.lr = lr,
            Optimizer::Sgd(o) => o.lr = lr,
        }
    }
}
