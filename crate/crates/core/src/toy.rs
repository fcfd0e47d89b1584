//! Synthetic 2-D data for desk-scale experiments.

use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::LabeledDataset;
use crate::rng::stream;
use crate::tensor::Tensor;

pub const MIXTURE_RADIUS: f64 = 0.7;
pub const MIXTURE_STD: f64 = 0.06;

/// `n` points from eight isotropic Gaussians evenly spaced on a circle,
/// labeled by component and clamped to `[-1, 1]`.
pub fn eight_gaussians(n: usize, seed: u64) -> LabeledDataset {
    mixture_on_circle(n, 8, MIXTURE_RADIUS, MIXTURE_STD, seed)
}

pub fn mixture_on_circle(n: usize, k: usize, radius: f64, std: f64, seed: u64) -> LabeledDataset {
    let mut rng = stream(seed, 0x7079);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(0..k);
        let angle = 2.0 * PI * c as f64 / k as f64;
        let zx: f64 = StandardNormal.sample(&mut rng);
        let zy: f64 = StandardNormal.sample(&mut rng);
        data.push((radius * angle.cos() + std * zx).clamp(-1.0, 1.0));
        data.push((radius * angle.sin() + std * zy).clamp(-1.0, 1.0));
        labels.push(c);
    }
    LabeledDataset::new(Tensor::matrix(n, 2, data).unwrap(), labels, k).unwrap()
}
