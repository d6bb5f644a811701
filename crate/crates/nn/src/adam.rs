use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::params::{Grads, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// First/second moment estimates and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One bias-corrected Adam update of every parameter in `store`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) -> Result<()> {
        if grads.len() != self.m.len() || store.len() != self.m.len() {
            return Err(NnError::shape("adam parameter count", self.m.len(), grads.len()));
        }
        for (id, g) in grads.iter() {
            let i = id.index();
            if g.len() != self.m[i].len() {
                return Err(NnError::shape(
                    format!("adam `{}`", store.get(id).name()),
                    self.m[i].len(),
                    g.len(),
                ));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (id, g) in grads.iter() {
            let i = id.index();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.value_mut(id);
            for k in 0..g.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = ParamStore::new();
        let id = s.add("w", &[3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut g = Grads::zeros_like(&s);
        g.get_mut(id).iter_mut().for_each(|v| *v = 1.0);
        let mut adam = Adam::new(&s, AdamConfig::with_lr(0.1));
        adam.step(&mut s, &g).unwrap();
        for (after, before) in s.value(id).iter().zip([1.0, 2.0, 3.0]) {
            // m̂/(√v̂ + ε) = 1/(1 + 1e-8)
            assert!((after - (before - 0.1)).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut s = ParamStore::new();
        let id = s.add("w", &[2], vec![0.5, -0.5]).unwrap();
        let mut adam = Adam::new(&s, AdamConfig::with_lr(0.1));
        let mut g = Grads::zeros_like(&s);
        g.get_mut(id).copy_from_slice(&[1.0, 1.0]);
        adam.step(&mut s, &g).unwrap();
        let before = s.value(id).to_vec();
        let m0 = adam.first_moment()[0][0];
        let v0 = adam.second_moment()[0][0];
        let zero = Grads::zeros_like(&s);
        // with g=0 after a nonzero history the update is nonzero; check the
        // pure-zero case on a fresh optimizer instead
        let mut fresh = Adam::new(&s, AdamConfig::with_lr(0.1));
        fresh.step(&mut s, &zero).unwrap();
        assert_eq!(s.value(id), before.as_slice());
        adam.step(&mut s, &zero).unwrap();
        assert!((adam.first_moment()[0][0] - 0.9 * m0).abs() < 1e-15);
        assert!((adam.second_moment()[0][0] - 0.999 * v0).abs() < 1e-15);
    }

    #[test]
    fn quadratic_bowl_decreases() {
        let mut s = ParamStore::new();
        let id = s.add("w", &[2], vec![3.0, -2.0]).unwrap();
        let mut adam = Adam::new(&s, AdamConfig::with_lr(0.1));
        let loss = |w: &[f64]| w[0] * w[0] + 4.0 * w[1] * w[1];
        let mut prev = loss(s.value(id));
        for _ in 0..10 {
            let w = s.value(id).to_vec();
            let mut g = Grads::zeros_like(&s);
            g.get_mut(id).copy_from_slice(&[2.0 * w[0], 8.0 * w[1]]);
            adam.step(&mut s, &g).unwrap();
            let cur = loss(s.value(id));
            assert!(cur < prev);
            prev = cur;
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut a = ParamStore::new();
        a.add_zeros("w", &[2]).unwrap();
        let mut b = ParamStore::new();
        b.add_zeros("w", &[3]).unwrap();
        let mut adam = Adam::new(&a, AdamConfig::default());
        assert!(adam.step(&mut a, &Grads::zeros_like(&b)).is_err());
    }
}
