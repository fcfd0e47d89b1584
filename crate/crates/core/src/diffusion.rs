//! DDPM variance schedules, the forward process, noise/next-step conversion
//! and the classifier-free-guided ancestral sampler.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{NodeId, Tape};
use crate::error::{ensure, invalid, Result};
use crate::nn::{forward_mlp, mlp_on_tape, Activation, BoundParams, MlpArch, ParamSet};
use crate::tensor::Tensor;

/// Linear beta schedule. Steps are 1-based; `alpha_bar(0) == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        ensure!(steps >= 1, "need at least one diffusion step");
        ensure!(
            0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0,
            "need 0 < beta_start <= beta_end < 1, got {} and {}",
            beta_start,
            beta_end
        );
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { betas, alphas, alpha_bars, beta_start, beta_end })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Variance of the ancestral sampler's noise at step `t`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)
    }

    fn check_step(&self, t: usize) -> Result<()> {
        ensure!(t >= 1 && t <= self.steps(), "step {} outside 1..={}", t, self.steps());
        Ok(())
    }
}

/// One Markov noising step: `sqrt(alpha_t) x_{t-1} + sqrt(1 - alpha_t) noise`.
pub fn forward_step(x_prev: &Tensor, t: usize, schedule: &NoiseSchedule, noise: &Tensor) -> Result<Tensor> {
    schedule.check_step(t)?;
    let a = schedule.alpha(t);
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    x_prev.zip_map(noise, |x, e| sa * x + sn * e)
}

/// Jump straight from `x_0` to `x_t`. `t == 0` returns `x0`.
pub fn forward_closed_form(x0: &Tensor, t: usize, schedule: &NoiseSchedule, noise: &Tensor) -> Result<Tensor> {
    ensure!(t <= schedule.steps(), "step {} outside 0..={}", t, schedule.steps());
    let ab = schedule.alpha_bar(t);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.zip_map(noise, |x, e| sa * x + sn * e)
}

/// Coefficients `(c_x, c_eps)` with `x_{t-1} mean = c_x * x_t + c_eps * eps`.
pub fn posterior_mean_coefs(schedule: &NoiseSchedule, t: usize) -> (f64, f64) {
    let a = schedule.alpha(t);
    let ab = schedule.alpha_bar(t);
    let c_x = 1.0 / a.sqrt();
    (c_x, -c_x * (1.0 - a) / (1.0 - ab).sqrt())
}

/// Noise prediction to next-step (`x_{t-1}`) prediction.
pub fn noise_to_next(x_t: &Tensor, eps: &Tensor, t: usize, schedule: &NoiseSchedule) -> Result<Tensor> {
    schedule.check_step(t)?;
    let (cx, ce) = posterior_mean_coefs(schedule, t);
    x_t.zip_map(eps, |x, e| cx * x + ce * e)
}

/// Inverse of [`noise_to_next`].
pub fn next_to_noise(x_t: &Tensor, x_prev: &Tensor, t: usize, schedule: &NoiseSchedule) -> Result<Tensor> {
    schedule.check_step(t)?;
    let (cx, ce) = posterior_mean_coefs(schedule, t);
    x_t.zip_map(x_prev, |x, m| (m - cx * x) / ce)
}

/// Sinusoidal features of the step index.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        out.push((t as f64 * freq).sin());
    }
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        out.push((t as f64 * freq).cos());
    }
    out.resize(dim, 0.0);
    out
}

/// How a network consumes the step index and class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conditioning {
    pub time_dim: usize,
    /// One-hot label width; `0` for an unconditional network.
    pub num_classes: usize,
}

impl Conditioning {
    pub fn width(&self) -> usize {
        self.time_dim + self.num_classes
    }

    /// Conditioning features for one row; `None` is the all-zero label.
    pub fn features(&self, t: usize, label: Option<usize>) -> Vec<f64> {
        let mut f = time_embedding(t, self.time_dim);
        let mut onehot = vec![0.0; self.num_classes];
        if let Some(y) = label {
            if y < self.num_classes {
                onehot[y] = 1.0;
            }
        }
        f.extend(onehot);
        f
    }

    pub fn matrix(&self, steps: &[usize], labels: &[Option<usize>]) -> Result<Tensor> {
        ensure!(steps.len() == labels.len(), "steps and labels differ in length");
        let data = steps.iter().zip(labels).flat_map(|(&t, &y)| self.features(t, y)).collect();
        Tensor::matrix(steps.len(), self.width(), data)
    }

    fn check_label(&self, label: Option<usize>) -> Result<()> {
        if let Some(y) = label {
            ensure!(self.num_classes > 0, "unconditional network given a label");
            ensure!(y < self.num_classes, "label {} outside 0..{}", y, self.num_classes);
        }
        Ok(())
    }
}

/// Anything that predicts the injected noise at step `t` for a batch.
pub trait NoisePredictor {
    fn predict_noise(&self, x: &Tensor, t: usize, labels: Option<&[usize]>) -> Result<Tensor>;
}

/// MLP noise predictor whose input is `[x, time features, one-hot label]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub arch: MlpArch,
    pub params: ParamSet,
    pub cond: Conditioning,
}

impl Denoiser {
    pub fn arch_for(data_dim: usize, cond: Conditioning, hidden: &[usize]) -> MlpArch {
        MlpArch::new(data_dim + cond.width(), hidden, data_dim, Activation::Silu)
    }

    pub fn data_dim(&self) -> usize {
        self.arch.output_dim
    }

    /// Per-row steps and labels.
    pub fn predict_noise_rows(&self, x: &Tensor, steps: &[usize], labels: &[Option<usize>]) -> Result<Tensor> {
        ensure!(x.rows() == steps.len(), "need one step per row");
        for &y in labels {
            self.cond.check_label(y)?;
        }
        let input = x.concat_cols(&self.cond.matrix(steps, labels)?)?;
        forward_mlp(&self.params, &input, &self.arch)
    }

    /// Noise prediction recorded on a tape; `x` is a tape node.
    pub fn noise_on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: NodeId,
        steps: &[usize],
        labels: &[Option<usize>],
    ) -> Result<NodeId> {
        for &y in labels {
            self.cond.check_label(y)?;
        }
        let c = tape.leaf(self.cond.matrix(steps, labels)?);
        let input = tape.concat_cols(x, c)?;
        mlp_on_tape(tape, &self.arch, bound, input)
    }
}

fn expand_labels(n: usize, labels: Option<&[usize]>) -> Result<Vec<Option<usize>>> {
    match labels {
        None => Ok(vec![None; n]),
        Some(l) => {
            ensure!(l.len() == n, "need {} labels, got {}", n, l.len());
            Ok(l.iter().map(|&y| Some(y)).collect())
        }
    }
}

impl NoisePredictor for Denoiser {
    fn predict_noise(&self, x: &Tensor, t: usize, labels: Option<&[usize]>) -> Result<Tensor> {
        let labels = expand_labels(x.rows(), labels)?;
        self.predict_noise_rows(x, &vec![t; x.rows()], &labels)
    }
}

/// Simplified DDPM objective: mean over examples of `||eps - eps_hat(x_t, t)||^2`
/// with `t` uniform on `1..=T` and fresh standard-normal noise.
pub fn ddpm_loss<M, R>(
    model: &M,
    batch: &Tensor,
    labels: Option<&[usize]>,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<f64>
where
    M: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    let (n, d) = batch.dims2();
    ensure!(n > 0 && d > 0, "empty batch");
    if let Some(l) = labels {
        ensure!(l.len() == n, "need {} labels", n);
    }
    let mut total = 0.0;
    for i in 0..n {
        let t = rng.random_range(1..=schedule.steps());
        let eps = standard_normal(rng, 1, d);
        let x_t = forward_closed_form(&batch.row_tensor(i), t, schedule, &eps)?;
        let lab = labels.map(|l| &l[i..i + 1]);
        let pred = model.predict_noise(&x_t, t, lab)?;
        total += eps.zip_map(&pred, |a, b| (a - b) * (a - b))?.sum();
    }
    Ok(total / n as f64)
}

/// Model estimate of `x_{t-1}` (posterior mean given the predicted noise).
pub fn predict_next<M>(model: &M, x_t: &Tensor, t: usize, labels: Option<&[usize]>, schedule: &NoiseSchedule) -> Result<Tensor>
where
    M: NoisePredictor + ?Sized,
{
    ensure!(t >= 1, "step 0 has no predecessor");
    let eps = model.predict_noise(x_t, t, labels)?;
    noise_to_next(x_t, &eps, t, schedule)
}

/// `(1 + w) * cond - w * uncond`.
pub fn guided_noise(cond: &Tensor, uncond: &Tensor, w: f64) -> Result<Tensor> {
    cond.zip_map(uncond, |c, u| (1.0 + w) * c - w * u)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    /// DDPM ancestral sampling with posterior variance, noiseless last step.
    Ancestral,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    pub w: f64,
    pub sampler: Sampler,
}

impl GuidanceConfig {
    pub const DEFAULT_W: f64 = 1.8;

    pub fn new(w: f64) -> Result<Self> {
        ensure!(w >= 0.0 && w.is_finite(), "guidance weight must be >= 0, got {}", w);
        Ok(Self { w, sampler: Sampler::Ancestral })
    }
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { w: Self::DEFAULT_W, sampler: Sampler::Ancestral }
    }
}

/// Guided noise estimate; without labels the model runs unconditionally.
pub fn guided_noise_estimate<M>(model: &M, x: &Tensor, t: usize, labels: Option<&[usize]>, w: f64) -> Result<Tensor>
where
    M: NoisePredictor + ?Sized,
{
    match labels {
        None => {
            ensure!(w == 0.0, "guidance weight {} needs a label", w);
            model.predict_noise(x, t, None)
        }
        Some(l) => {
            let cond = model.predict_noise(x, t, Some(l))?;
            if w == 0.0 {
                return Ok(cond);
            }
            let uncond = model.predict_noise(x, t, None)?;
            guided_noise(&cond, &uncond, w)
        }
    }
}

/// Deterministic guided estimate of `x_{t-1}` (the sampler's mean).
pub fn guided_mean<M>(model: &M, x_t: &Tensor, t: usize, labels: Option<&[usize]>, w: f64, schedule: &NoiseSchedule) -> Result<Tensor>
where
    M: NoisePredictor + ?Sized,
{
    let eps = guided_noise_estimate(model, x_t, t, labels, w)?;
    noise_to_next(x_t, &eps, t, schedule)
}

/// One guided reverse step `x_t -> x_{t-1}`: the guided mean plus
/// posterior noise except at `t == 1`.
pub fn cfg_predict<M, R>(
    model: &M,
    x_t: &Tensor,
    t: usize,
    labels: Option<&[usize]>,
    w: f64,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Tensor>
where
    M: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    let mean = guided_mean(model, x_t, t, labels, w, schedule)?;
    if t == 1 {
        return Ok(mean);
    }
    let sd = schedule.posterior_variance(t).sqrt();
    let (r, c) = mean.dims2();
    let z = standard_normal(rng, r, c);
    mean.zip_map(&z, |m, z| m + sd * z)
}

/// Draw `n` samples from `x_T ~ N(0, I)` through all `T` guided steps;
/// output is clamped to `[-1, 1]`.
pub fn sample_reverse<M, R>(
    model: &M,
    data_dim: usize,
    schedule: &NoiseSchedule,
    guidance: GuidanceConfig,
    n: usize,
    labels: Option<&[usize]>,
    rng: &mut R,
) -> Result<Tensor>
where
    M: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    ensure!(n >= 1, "need at least one sample");
    if let Some(l) = labels {
        ensure!(l.len() == n, "need {} labels, got {}", n, l.len());
    }
    let w = if labels.is_some() { guidance.w } else { 0.0 };
    let mut x = standard_normal(rng, n, data_dim);
    for t in (1..=schedule.steps()).rev() {
        x = cfg_predict(model, &x, t, labels, w, schedule, rng)?;
        if !x.is_finite() {
            return Err(invalid("sampler produced non-finite values"));
        }
    }
    Ok(x.map(|v| v.clamp(-1.0, 1.0)))
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5]);
    }

    #[test]
    fn two_step_schedule_by_hand() {
        let s = NoiseSchedule::linear(2, 0.1, 0.3).unwrap();
        assert!((s.beta(1) - 0.1).abs() < 1e-15 && (s.beta(2) - 0.3).abs() < 1e-15);
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.63).abs() < 1e-15);
    }

    #[test]
    fn schedule_bounds_rejected() {
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(5, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(5, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(5, 0.1, 1.0).is_err());
    }

    #[test]
    fn forward_step_arithmetic() {
        // beta = 0.75 so alpha = 0.25
        let s = NoiseSchedule::linear(1, 0.75, 0.75).unwrap();
        let x = forward_step(&Tensor::row(vec![2.0]), 1, &s, &Tensor::row(vec![0.0])).unwrap();
        assert!((x.data()[0] - 1.0).abs() < 1e-15);
        let tiny = NoiseSchedule::linear(1, 1e-300, 1e-300).unwrap();
        let x = forward_step(&Tensor::row(vec![2.0]), 1, &tiny, &Tensor::row(vec![0.7])).unwrap();
        assert!((x.data()[0] - 2.0).abs() < 1e-140);
        assert!(forward_step(&Tensor::row(vec![2.0]), 1, &s, &Tensor::row(vec![0.0, 1.0])).is_err());
    }

    #[test]
    fn closed_form_arithmetic() {
        // alpha_bar = 0.36 -> 0.6 * 5 + 0.8 * 1
        let s = NoiseSchedule::linear(1, 0.64, 0.64).unwrap();
        let x = forward_closed_form(&Tensor::row(vec![5.0]), 1, &s, &Tensor::row(vec![1.0])).unwrap();
        assert!((x.data()[0] - 3.8).abs() < 1e-12);
        let x0 = Tensor::row(vec![1.0, -2.0]);
        assert_eq!(forward_closed_form(&x0, 0, &s, &Tensor::row(vec![3.0, 3.0])).unwrap(), x0);
    }

    #[test]
    fn noise_next_round_trip() {
        let s = NoiseSchedule::linear(20, 1e-4, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for t in 1..=20 {
            let x = standard_normal(&mut rng, 3, 2);
            let e = standard_normal(&mut rng, 3, 2);
            let m = noise_to_next(&x, &e, t, &s).unwrap();
            let back = next_to_noise(&x, &m, t, &s).unwrap();
            for (a, b) in back.data().iter().zip(e.data()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    struct Const(f64);
    impl NoisePredictor for Const {
        fn predict_noise(&self, x: &Tensor, _t: usize, labels: Option<&[usize]>) -> Result<Tensor> {
            Ok(x.map(|_| if labels.is_some() { self.0 } else { 1.0 }))
        }
    }

    #[test]
    fn guidance_combination() {
        let g = guided_noise(&Tensor::row(vec![2.0]), &Tensor::row(vec![1.0]), 1.0).unwrap();
        assert_eq!(g.data(), &[3.0]);
        let x = Tensor::row(vec![0.3]);
        let w0 = guided_noise_estimate(&Const(2.0), &x, 1, Some(&[0]), 0.0).unwrap();
        assert_eq!(w0, Const(2.0).predict_noise(&x, 1, Some(&[0])).unwrap());
        assert!(guided_noise_estimate(&Const(2.0), &x, 1, None, 1.8).is_err());
        assert_eq!(GuidanceConfig::default().w, 1.8);
        assert!(GuidanceConfig::new(-0.1).is_err());
    }

    #[test]
    fn predict_next_rejects_step_zero() {
        let s = NoiseSchedule::linear(3, 0.1, 0.2).unwrap();
        assert!(predict_next(&Const(0.0), &Tensor::row(vec![1.0]), 0, None, &s).is_err());
    }

    #[test]
    fn time_embedding_width() {
        assert_eq!(time_embedding(3, 8).len(), 8);
        assert_eq!(time_embedding(3, 7).len(), 7);
        let e = time_embedding(0, 4);
        assert_eq!(e, vec![0.0, 0.0, 1.0, 1.0]);
    }
}
