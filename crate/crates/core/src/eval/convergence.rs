use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure, Result};
use crate::privacy::clip;
use crate::rng::stream;

/// Smoothness `tau1`, strong convexity `tau2`, and gradient alignment `mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceConstants {
    pub tau1: f64,
    pub tau2: f64,
    pub mu: f64,
}

/// Step size, noise multiplier, clip bound and dimension of the injected noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub gamma: f64,
    pub sigma: f64,
    pub clip: f64,
    pub dim: usize,
}

impl NoiseModel {
    /// `tau1 gamma C² (1 + sigma² d) / (2 tau2 mu)`.
    pub fn floor(&self, c: &ConvergenceConstants) -> f64 {
        c.tau1 * self.gamma * self.clip * self.clip * (1.0 + self.sigma * self.sigma * self.dim as f64)
            / (2.0 * c.tau2 * c.mu)
    }

    /// `1 - 2 tau2 gamma mu`.
    pub fn contraction(&self, c: &ConvergenceConstants) -> f64 {
        1.0 - 2.0 * c.tau2 * self.gamma * c.mu
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Every `d_k` lies under `d_0 rho^k + floor`.
    Dominated,
    NotDominated { first_violation: usize },
    /// `2 tau2 gamma mu` is outside `(0, 1)`.
    PreconditionViolated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTrace {
    /// `d_k = L_k - L*`, with `L*` the known optimum or the best loss seen.
    pub d: Vec<f64>,
    pub constants: ConvergenceConstants,
    pub contraction: f64,
    pub floor: f64,
    pub verdict: Verdict,
}

/// Compare a loss trace to the geometric envelope of the sanitized-SGD bound.
pub fn convergence_check(
    losses: &[f64],
    optimum: Option<f64>,
    noise: &NoiseModel,
    constants: ConvergenceConstants,
) -> Result<ConvergenceTrace> {
    ensure!(!losses.is_empty(), "empty loss trace");
    ensure!(
        constants.tau1 > 0.0 && constants.tau2 > 0.0 && constants.mu > 0.0,
        "constants must be positive"
    );
    ensure!(noise.gamma > 0.0 && noise.sigma >= 0.0 && noise.clip >= 0.0, "invalid noise model");
    let best = optimum.unwrap_or_else(|| losses.iter().copied().fold(f64::INFINITY, f64::min));
    let d: Vec<f64> = losses.iter().map(|l| l - best).collect();
    let rho = noise.contraction(&constants);
    let floor = noise.floor(&constants);
    let verdict = if !(rho > 0.0 && rho < 1.0) {
        Verdict::PreconditionViolated
    } else {
        let mut env = d[0];
        let mut v = Verdict::Dominated;
        for (k, dk) in d.iter().enumerate() {
            if *dk > env + floor + 1e-12 * (1.0 + env.abs()) {
                v = Verdict::NotDominated { first_violation: k };
                break;
            }
            env *= rho;
        }
        v
    };
    Ok(ConvergenceTrace { d, constants, contraction: rho, floor, verdict })
}

/// `L(theta) = sum_i lambda_i theta_i² / 2`, minimized at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticBowl {
    pub eigenvalues: Vec<f64>,
}

impl QuadraticBowl {
    pub fn loss(&self, theta: &[f64]) -> f64 {
        0.5 * self.eigenvalues.iter().zip(theta).map(|(l, t)| l * t * t).sum::<f64>()
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.eigenvalues.iter().zip(theta).map(|(l, t)| l * t).collect()
    }

    /// Largest and smallest curvature along the coordinate axes, probed by
    /// finite differences of the gradient at `theta`.
    pub fn probe_curvature(&self, theta: &[f64], h: f64) -> (f64, f64) {
        let g0 = self.gradient(theta);
        let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..theta.len() {
            let mut t = theta.to_vec();
            t[i] += h;
            let c = (self.gradient(&t)[i] - g0[i]) / h;
            hi = hi.max(c);
            lo = lo.min(c);
        }
        (hi, lo)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BowlRun {
    pub losses: Vec<f64>,
    /// Mean loss over the second half of the run.
    pub plateau: f64,
    /// Curvature probes for `tau1`, `tau2`; `mu` is `mean <clip(g), g>` over
    /// `mean |g|²` across the second half of the run.
    pub fitted: ConvergenceConstants,
}

/// Run `theta <- theta - gamma (clip(grad, C) + N(0, sigma² C² I))` on a bowl.
pub fn simulate_quadratic_bowl(
    bowl: &QuadraticBowl,
    theta0: &[f64],
    noise: &NoiseModel,
    iterations: usize,
    seed: u64,
) -> Result<BowlRun> {
    ensure!(theta0.len() == bowl.eigenvalues.len() && noise.dim == theta0.len(), "dimension mismatch");
    ensure!(iterations >= 2, "need at least two iterations");
    let mut rng = stream(seed, 0x626f);
    let mut theta = theta0.to_vec();
    let mut losses = Vec::with_capacity(iterations + 1);
    losses.push(bowl.loss(&theta));
    let (mut inner, mut sq) = (0.0, 0.0);
    for k in 0..iterations {
        let g = bowl.gradient(&theta);
        let gc = clip(&g, noise.clip)?;
        if k >= iterations / 2 {
            inner += gc.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
            sq += g.iter().map(|v| v * v).sum::<f64>();
        }
        for (t, c) in theta.iter_mut().zip(&gc) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *t -= noise.gamma * (c + noise.sigma * noise.clip * z);
        }
        losses.push(bowl.loss(&theta));
    }
    let tail = &losses[losses.len() / 2..];
    let plateau = tail.iter().sum::<f64>() / tail.len() as f64;
    let (tau1, tau2) = bowl.probe_curvature(theta0, 1e-4);
    Ok(BowlRun { losses, plateau, fitted: ConvergenceConstants { tau1, tau2, mu: if sq > 0.0 { inner / sq } else { 1.0 } } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn model(sigma: f64, clip: f64) -> NoiseModel {
        NoiseModel { gamma: 0.25, sigma, clip, dim: 4 }
    }

    #[test]
    fn geometric_sequence_is_dominated() {
        let losses: Vec<f64> = (0..30).map(|k| 0.5f64.powi(k)).collect();
        let c = ConvergenceConstants { tau1: 1.0, tau2: 1.0, mu: 1.0 };
        let t = convergence_check(&losses, Some(0.0), &model(0.0, 0.0), c).unwrap();
        assert_eq!(t.contraction, 0.5);
        assert_eq!(t.floor, 0.0);
        assert_eq!(t.verdict, Verdict::Dominated);
    }

    #[test]
    fn floor_vanishes_without_noise_or_clip() {
        let c = ConvergenceConstants { tau1: 2.0, tau2: 1.0, mu: 0.5 };
        assert_eq!(model(0.0, 0.0).floor(&c), 0.0);
        assert!(model(3.0, 1e-9).floor(&c) < 1e-15);
    }

    #[test]
    fn bad_contraction_is_a_verdict() {
        let c = ConvergenceConstants { tau1: 1.0, tau2: 4.0, mu: 1.0 };
        let t = convergence_check(&[1.0, 0.5], None, &model(1.0, 1.0), c).unwrap();
        assert_eq!(t.verdict, Verdict::PreconditionViolated);
        assert!(convergence_check(&[1.0], None, &model(1.0, 1.0), ConvergenceConstants { tau1: 0.0, ..c }).is_err());
    }

    #[test]
    fn raising_sigma_keeps_domination() {
        let losses = vec![1.0, 0.9, 0.3, 0.25, 0.26];
        let c = ConvergenceConstants { tau1: 1.0, tau2: 1.0, mu: 1.0 };
        let lo = convergence_check(&losses, Some(0.0), &model(0.5, 0.5), c).unwrap();
        let hi = convergence_check(&losses, Some(0.0), &model(2.0, 0.5), c).unwrap();
        assert!(hi.floor > lo.floor);
        if lo.verdict == Verdict::Dominated {
            assert_eq!(hi.verdict, Verdict::Dominated);
        }
        assert_ne!(lo.verdict, Verdict::Dominated);
        assert_eq!(hi.verdict, Verdict::Dominated);
    }

    #[test]
    fn curvature_probe_recovers_eigenvalues() {
        let bowl = QuadraticBowl { eigenvalues: vec![1.0, 1.5, 0.5] };
        let (hi, lo) = bowl.probe_curvature(&[0.3, -0.2, 0.1], 1e-4);
        assert!((hi - 1.5).abs() < 1e-8 && (lo - 0.5).abs() < 1e-8);
    }
}
