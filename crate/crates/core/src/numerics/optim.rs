use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.001,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("betas must lie in [0, 1)"));
        }
        if self.eps <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::config("eps must be positive and weight decay non-negative"));
        }
        Ok(())
    }
}

/// AdamW moments for one [`ParamStore`].
///
/// Decay is decoupled: `θ ← θ·(1 − lr·wd)` happens before the bias-corrected
/// Adam step.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        let m: Vec<Tensor> = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape()))
            .collect();
        Self {
            config,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, idx: usize) -> &Tensor {
        &self.m[idx]
    }

    pub fn second_moment(&self, idx: usize) -> &Tensor {
        &self.v[idx]
    }

    /// Applies one update to every trainable parameter and zeroes all
    /// gradients.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::shape("optimizer state does not match parameter store"));
        }
        for p in store.iter_mut() {
            if p.trainable && !p.grad.is_finite() {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let decay = 1.0 - lr * weight_decay;

        for (i, p) in store.iter_mut().enumerate() {
            if p.trainable {
                let m = self.m[i].data_mut();
                let v = self.v[i].data_mut();
                let g = p.grad.data();
                for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                    *w *= decay;
                    m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                    v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                    let mhat = m[j] / bc1;
                    let vhat = v[j] / bc2;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(value: f64, grad: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::full(&[1], value), true).unwrap();
        s.get_mut(id).grad = Tensor::full(&[1], grad);
        s
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let cfg = AdamWConfig {
            lr: 0.01,
            weight_decay: 0.0,
            eps: 1e-12,
            ..Default::default()
        };
        for g in [0.5, -3.0] {
            let mut s = store_with(1.0, g);
            let mut opt = AdamW::new(cfg, &s);
            opt.step(&mut s).unwrap();
            assert!((opt.first_moment(0).data()[0] - 0.1 * g).abs() < 1e-15);
            assert!((opt.second_moment(0).data()[0] - 0.001 * g * g).abs() < 1e-15);
            let moved = s.iter().next().unwrap().1.value.data()[0] - 1.0;
            assert!((moved + 0.01 * g.signum()).abs() < 1e-9, "{moved}");
        }
    }

    #[test]
    fn zero_gradient_is_pure_decay() {
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.001,
            ..Default::default()
        };
        let mut s = store_with(2.0, 0.0);
        let mut opt = AdamW::new(cfg, &s);
        opt.step(&mut s).unwrap();
        let w = s.iter().next().unwrap().1.value.data()[0];
        assert_eq!(w, 2.0 * 0.9999);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = store_with(1.0, 0.0);
        s.iter_mut().next().unwrap().grad.data_mut()[0] = f64::INFINITY;
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        match opt.step(&mut s) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "w"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn frozen_parameters_untouched_and_grads_zeroed() {
        let mut s = store_with(1.0, 0.3);
        s.freeze_all();
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        opt.step(&mut s).unwrap();
        let p = s.iter().next().unwrap().1;
        assert_eq!(p.value.data()[0], 1.0);
        assert_eq!(p.grad.data()[0], 0.0);
        assert_eq!(opt.steps(), 1);
    }
}
