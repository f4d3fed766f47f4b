use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::gnn::ParamStore;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates per parameter.
#[derive(Debug, Clone, Default)]
pub struct Adam {
    pub config: AdamConfig,
    m: BTreeMap<String, Matrix>,
    v: BTreeMap<String, Matrix>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            ..Adam::default()
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter named in `grads`. Parameters
    /// without a gradient are left untouched.
    pub fn update(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Matrix>, lr: f64) {
        self.update_with(params, grads, |_| lr);
    }

    /// Like [`Adam::update`] with a per-parameter learning rate.
    pub fn update_with(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Matrix>, lr_for: impl Fn(&str) -> f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else { continue };
            let lr = lr_for(name);
            let m = self.m.entry(name.clone()).or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
            for (((p, m), v), g) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::FreezeGroup;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::default();
        store.insert("a".into(), FreezeGroup::Upper, Matrix::column(&[1.0, -1.0]));
        store.insert("b".into(), FreezeGroup::Lower, Matrix::scalar(3.0));
        let grads = BTreeMap::from([("a".to_string(), Matrix::column(&[0.5, -2.0]))]);
        let mut adam = Adam::new(AdamConfig::default());
        adam.update(&mut store, &grads, 0.1);
        let a = store.get("a").unwrap().data();
        assert!((a[0] - 0.9).abs() < 1e-6 && (a[1] + 0.9).abs() < 1e-6);
        assert_eq!(store.get("b").unwrap().item(), 3.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::default();
        store.insert("x".into(), FreezeGroup::Upper, Matrix::scalar(5.0));
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..2000 {
            let x = store.get("x").unwrap().item();
            let grads = BTreeMap::from([("x".to_string(), Matrix::scalar(2.0 * (x - 2.0)))]);
            adam.update(&mut store, &grads, 0.05);
        }
        assert!((store.get("x").unwrap().item() - 2.0).abs() < 1e-3);
    }
}
