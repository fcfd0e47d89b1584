//! SGD and Adam with a cosine-annealed learning rate.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;

use crate::error::{ensure, Result};
use crate::nn::ParamSet;

/// Step counter plus cosine annealing from `base_lr` down to zero over
/// `total_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub step: u64,
    pub base_lr: f64,
    pub total_steps: u64,
}

impl OptState {
    pub fn new(base_lr: f64, total_steps: u64) -> Self {
        Self { step: 0, base_lr, total_steps: total_steps.max(1) }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let k = step.min(self.total_steps) as f64;
        0.5 * self.base_lr * (1.0 + (PI * k / self.total_steps as f64).cos())
    }

    pub fn current_lr(&self) -> f64 {
        self.lr_at(self.step)
    }
}

/// `theta - lr(k) * grad`, then advance the step counter.
pub fn sgd_step(params: &ParamSet, grad: &[f64], state: &mut OptState) -> Result<ParamSet> {
    ensure!(
        grad.len() == params.len(),
        "gradient has {} entries, parameters have {}",
        grad.len(),
        params.len()
    );
    let lr = state.current_lr();
    let next: Vec<f64> = params.flatten().iter().zip(grad).map(|(p, g)| p - lr * g).collect();
    state.step += 1;
    params.unflatten(&next)
}

/// Adam moments; shares the cosine schedule of [`OptState`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub state: OptState,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(param_count: usize, state: OptState) -> Self {
        Self { state, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; param_count], v: vec![0.0; param_count] }
    }

    pub fn step(&mut self, params: &ParamSet, grad: &[f64]) -> Result<ParamSet> {
        ensure!(grad.len() == params.len() && grad.len() == self.m.len(), "gradient length mismatch");
        let lr = self.state.current_lr();
        self.state.step += 1;
        let t = self.state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let mut flat = params.flatten();
        for i in 0..flat.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            flat[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
        params.unflatten(&flat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use alloc::vec;

    fn scalar_params(v: f64) -> ParamSet {
        ParamSet::new(vec![("w".into(), Tensor::scalar(v))]).unwrap()
    }

    #[test]
    fn zero_gradient_is_noop() {
        let p = scalar_params(1.5);
        let mut st = OptState::new(0.1, 10);
        assert_eq!(sgd_step(&p, &[0.0], &mut st).unwrap(), p);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn single_step_arithmetic() {
        let mut st = OptState::new(0.1, 10);
        let p = sgd_step(&scalar_params(1.0), &[1.0], &mut st).unwrap();
        assert!((p.flatten()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_rejected() {
        let mut st = OptState::new(0.1, 10);
        assert!(sgd_step(&scalar_params(1.0), &[1.0, 2.0], &mut st).is_err());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let gamma = 0.3;
        let n = 1000;
        let mut st = OptState::new(gamma, n);
        let p = scalar_params(0.0);
        let mut p = p;
        for _ in 0..n {
            p = sgd_step(&p, &[0.0], &mut st).unwrap();
        }
        assert!(st.current_lr().abs() < 1e-9);
        // independent evaluation of gamma * (1 + cos(pi/2)) / 2
        assert!((st.lr_at(n / 2) - gamma / 2.0).abs() < 1e-12);
        assert!((st.lr_at(0) - gamma).abs() < 1e-15);
    }
}
