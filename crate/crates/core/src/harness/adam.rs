use ndarray::{Array2, Zip};

use crate::tensor::{GradMap, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// Whether decoupled weight decay applies to a parameter: projection
/// matrices only, never biases or normalization affines.
pub fn is_decayed(name: &str) -> bool {
    name.ends_with(".w") || name.ends_with("w_prime")
}

/// First and second moment estimates aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<_> = store.tensors().iter().map(|t| Array2::zeros(t.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one bias-corrected update. Returns `false` and leaves both
    /// the parameters and the optimizer state untouched when any gradient
    /// entry is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradMap, lr: f64) -> bool {
        if !grads.is_finite() {
            return false;
        }
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in store
            .tensors_mut()
            .iter_mut()
            .zip(grads.as_slice())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let decay = if is_decayed(&p.name) { 1.0 - lr * weight_decay } else { 1.0 };
            Zip::from(&mut p.value).and(g).and(m).and(v).for_each(|w, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *w = *w * decay - lr * mhat / (vhat.sqrt() + eps);
            });
        }
        true
    }
}
