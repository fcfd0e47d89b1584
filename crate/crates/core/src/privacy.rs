//! Per-example clipping, the Gaussian mechanism and the Renyi-DP accountant
//! for stochastic adversarial distillation.
//!
//! Each example's clipped contribution is treated as a Gaussian mechanism
//! with L2 sensitivity `2 C sqrt(s)`; `B * N` such mechanisms compose
//! additively, so at order `q`
//!
//! ```text
//! eps_rdp(q) = 2 C^2 s B N q / sigma^2
//! eps_dp     = eps_rdp(q) + ln((q - 1) / q) - (ln(delta) + ln(q)) / (q - 1)
//! ```
//!
//! and the reported budget is the minimum of `eps_dp` over a grid of orders.
//! No subsampling amplification is applied.

use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure, Error, Result};
use crate::nn::PerExampleGrads;

/// Clip bound used for the large-scale image experiments.
pub const REFERENCE_CLIP: f64 = 1e-6;
pub const REFERENCE_DELTA: f64 = 1e-5;
/// Noise multipliers reported for eps = 1 and eps = 10 at image scale.
/// Documentation only: they are not reproducible from the closed form above.
pub const REFERENCE_SIGMA_EPS1: f64 = 1.9;
pub const REFERENCE_SIGMA_EPS10: f64 = 0.6;

/// Inputs of the privacy accountant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyParams {
    /// Clip bound `C` (gradient L2 units).
    pub clip: f64,
    /// Noise multiplier `sigma`.
    pub sigma: f64,
    pub batch_size: u64,
    pub iterations: u64,
    /// Diffusion steps `T`; scales the injected noise, not the accountant.
    pub steps: u64,
    /// Length `s` of the sanitized gradient vector.
    pub param_count: u64,
    pub delta: f64,
}

impl PrivacyParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.clip > 0.0 && self.clip.is_finite(), "clip bound must be positive, got {}", self.clip);
        ensure!(self.sigma > 0.0, "noise multiplier must be positive, got {}", self.sigma);
        ensure!(self.batch_size >= 1, "batch size must be >= 1");
        ensure!(self.iterations >= 1, "iteration count must be >= 1");
        ensure!(self.steps >= 1, "diffusion steps must be >= 1");
        ensure!(self.param_count >= 1, "parameter count must be >= 1");
        ensure!(self.delta > 0.0 && self.delta < 1.0, "delta must lie in (0, 1), got {}", self.delta);
        Ok(())
    }

    /// Composed RDP epsilon at order `q`.
    pub fn rdp_epsilon(&self, q: f64) -> Result<f64> {
        let single = rdp_gaussian(q, l2_sensitivity(self.clip, self.param_count)?, self.sigma)?;
        Ok(compose_rdp(single, self.batch_size * self.iterations).epsilon)
    }
}

/// A point on an RDP curve: `(q, eps)`-RDP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdpPoint {
    pub order: f64,
    pub epsilon: f64,
}

/// Accountant output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacySpend {
    /// Converted epsilon at the best order; may be negative.
    pub epsilon_raw: f64,
    pub best_order: f64,
    pub epsilon_rdp: f64,
    pub delta: f64,
}

impl PrivacySpend {
    /// Converted epsilon floored at zero for reporting.
    pub fn epsilon(&self) -> f64 {
        self.epsilon_raw.max(0.0)
    }
}

/// `v / max(1, ||v|| / C)`.
pub fn clip(v: &[f64], c: f64) -> Result<Vec<f64>> {
    ensure!(c > 0.0, "clip bound must be positive, got {}", c);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= c {
        return Ok(v.to_vec());
    }
    let mut out: Vec<f64> = v.iter().map(|x| x * (c / norm)).collect();
    while out.iter().map(|x| x * x).sum::<f64>().sqrt() > c {
        out.iter_mut().for_each(|x| *x *= 1.0 - f64::EPSILON);
    }
    Ok(out)
}

/// `v + N(0, (sigma C)^2 I)`.
pub fn gaussian_perturb<R: Rng + ?Sized>(v: &[f64], sigma: f64, c: f64, rng: &mut R) -> Result<Vec<f64>> {
    ensure!(sigma > 0.0 && c > 0.0, "sigma and C must be positive");
    let sd = sigma * c;
    Ok(v.iter()
        .map(|x| {
            let z: f64 = StandardNormal.sample(rng);
            x + sd * z
        })
        .collect())
}

/// Sensitivity of a sum of clipped per-example vectors of length `s`: `2 C sqrt(s)`.
pub fn l2_sensitivity(c: f64, s: u64) -> Result<f64> {
    ensure!(c > 0.0, "clip bound must be positive");
    ensure!(s >= 1, "vector length must be >= 1");
    Ok(2.0 * c * (s as f64).sqrt())
}

/// Gaussian mechanism with absolute noise scale `sigma`: `q S^2 / (2 sigma^2)`.
pub fn rdp_gaussian(q: f64, sensitivity: f64, sigma: f64) -> Result<RdpPoint> {
    ensure!(q > 1.0, "RDP order must exceed 1, got {}", q);
    ensure!(sigma > 0.0, "noise scale must be positive");
    ensure!(sensitivity >= 0.0, "sensitivity must be non-negative");
    Ok(RdpPoint { order: q, epsilon: q * sensitivity * sensitivity / (2.0 * sigma * sigma) })
}

/// `k`-fold adaptive composition at a fixed order.
pub fn compose_rdp(point: RdpPoint, k: u64) -> RdpPoint {
    RdpPoint { order: point.order, epsilon: point.epsilon * k as f64 }
}

/// RDP to `(eps, delta)`-DP conversion (natural logs). Not clamped.
pub fn rdp_to_dp(point: RdpPoint, delta: f64) -> Result<f64> {
    let q = point.order;
    ensure!(q > 1.0, "RDP order must exceed 1, got {}", q);
    ensure!(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1), got {}", delta);
    Ok(point.epsilon + ((q - 1.0) / q).ln() - (delta.ln() + q.ln()) / (q - 1.0))
}

/// Orders searched by [`total_epsilon`]: 1.25, 1.5, 1.75, then 2..=512.
pub fn rdp_orders() -> Vec<f64> {
    let mut orders: Vec<f64> = [1.25, 1.5, 1.75].to_vec();
    orders.extend((2..=512).map(f64::from));
    orders
}

/// Minimum converted epsilon over [`rdp_orders`].
pub fn total_epsilon(p: &PrivacyParams) -> Result<PrivacySpend> {
    p.validate()?;
    let mut best: Option<PrivacySpend> = None;
    for q in rdp_orders() {
        let eps_rdp = p.rdp_epsilon(q)?;
        let eps = rdp_to_dp(RdpPoint { order: q, epsilon: eps_rdp }, p.delta)?;
        if best.is_none_or(|b| eps < b.epsilon_raw) {
            best = Some(PrivacySpend { epsilon_raw: eps, best_order: q, epsilon_rdp: eps_rdp, delta: p.delta });
        }
    }
    Ok(best.expect("order grid is non-empty"))
}

const SIGMA_MIN: f64 = 1e-6;
const SIGMA_MAX: f64 = 1e9;

/// Smallest noise multiplier (relative tolerance 1e-6) whose accounted
/// epsilon does not exceed `target`. `p.sigma` is ignored.
pub fn calibrate_sigma(target: f64, p: &PrivacyParams) -> Result<f64> {
    ensure!(target > 0.0 && target.is_finite(), "target epsilon must be positive");
    let eps_at = |sigma: f64| total_epsilon(&PrivacyParams { sigma, ..*p }).map(|s| s.epsilon_raw);
    let mut hi = SIGMA_MAX;
    let floor = eps_at(hi)?;
    if floor > target {
        return Err(Error::Infeasible(alloc::format!(
            "target epsilon {target} is below the accountant floor {floor:.6} reachable with sigma <= {SIGMA_MAX:e}"
        )));
    }
    let mut lo = SIGMA_MIN;
    if eps_at(lo)? <= target {
        return Ok(lo);
    }
    while hi / lo - 1.0 > 1e-6 {
        let mid = (lo * hi).sqrt();
        if eps_at(mid)? <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Clip every row, sum, add `N(0, (sigma C)^2 I)` and divide by `B * T`.
pub fn sanitize_per_example<R: Rng + ?Sized>(grads: &PerExampleGrads, p: &PrivacyParams, rng: &mut R) -> Result<Vec<f64>> {
    ensure!(p.batch_size >= 1, "batch size must be >= 1");
    ensure!(
        grads.batch_size() as u64 == p.batch_size,
        "expected {} gradient rows, got {}",
        p.batch_size,
        grads.batch_size()
    );
    let mut sum = alloc::vec![0.0; grads.param_count()];
    for row in grads.rows() {
        for (s, v) in sum.iter_mut().zip(clip(row, p.clip)?) {
            *s += v;
        }
    }
    let noisy = gaussian_perturb(&sum, p.sigma, p.clip, rng)?;
    let div = (p.batch_size * p.steps) as f64;
    Ok(noisy.into_iter().map(|v| v / div).collect())
}
