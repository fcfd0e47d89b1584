//! Lloyd's k-means with k-means++ seeding, used to pseudo-label unlabeled data.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;
use rand::Rng;

use crate::dataset::LabeledDataset;
use crate::error::{ensure, Result};
use crate::rng::stream;
use crate::tensor::Tensor;

pub const MAX_ITERATIONS: usize = 300;
pub const TOLERANCE: f64 = 1e-6;

/// Fitted clustering over standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    pub iterations: usize,
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = dist_sq(c, p);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

impl KMeans {
    pub fn fit(data: &Tensor, k: usize, seed: u64) -> Result<Self> {
        let (n, d) = data.dims2();
        ensure!(k >= 1, "need at least one cluster");
        ensure!(k <= n, "{} clusters requested for {} points", k, n);
        // per-feature standardization
        let mut mean = vec![0.0; d];
        let mut scale = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(data.row_slice(i)) {
                *m += v / n as f64;
            }
        }
        for i in 0..n {
            for j in 0..d {
                scale[j] += (data.row_slice(i)[j] - mean[j]).powi(2) / n as f64;
            }
        }
        for s in &mut scale {
            *s = if *s > 0.0 { num_traits::Float::sqrt(*s) } else { 1.0 };
        }
        let mut km = KMeans { centroids: Vec::new(), mean, scale, iterations: 0 };
        let points: Vec<Vec<f64>> = (0..n).map(|i| km.standardize(data.row_slice(i))).collect();

        let mut rng = stream(seed, 0x6b6d);
        let mut centroids = vec![points[rng.random_range(0..n)].clone()];
        let mut d2: Vec<f64> = points.iter().map(|p| dist_sq(p, &centroids[0])).collect();
        while centroids.len() < k {
            let total: f64 = d2.iter().sum();
            let pick = if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                let mut idx = n - 1;
                for (i, w) in d2.iter().enumerate() {
                    if u < *w {
                        idx = i;
                        break;
                    }
                    u -= w;
                }
                idx
            } else {
                rng.random_range(0..n)
            };
            centroids.push(points[pick].clone());
            for (dd, p) in d2.iter_mut().zip(&points) {
                *dd = dd.min(dist_sq(p, &centroids[centroids.len() - 1]));
            }
        }

        let mut assign = vec![0usize; n];
        for it in 0..MAX_ITERATIONS {
            for (a, p) in assign.iter_mut().zip(&points) {
                *a = nearest(&centroids, p).0;
            }
            let mut sums = vec![vec![0.0; d]; k];
            let mut counts = vec![0usize; k];
            for (a, p) in assign.iter().zip(&points) {
                counts[*a] += 1;
                sums[*a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
            }
            let mut shift = 0.0f64;
            for j in 0..k {
                if counts[j] == 0 {
                    continue; // empty cluster keeps its centroid
                }
                let c: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
                shift = shift.max(dist_sq(&c, &centroids[j]));
                centroids[j] = c;
            }
            km.iterations = it + 1;
            if shift <= TOLERANCE * TOLERANCE {
                break;
            }
        }
        km.centroids = centroids;
        Ok(km)
    }

    fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn predict(&self, data: &Tensor) -> Vec<usize> {
        (0..data.rows()).map(|i| nearest(&self.centroids, &self.standardize(data.row_slice(i))).0).collect()
    }
}

/// Label `data` by k-means cluster index.
pub fn pseudo_label(data: &Tensor, k: usize, seed: u64) -> Result<(LabeledDataset, KMeans)> {
    let km = KMeans::fit(data, k, seed)?;
    let labels = km.predict(data);
    Ok((LabeledDataset::new(data.clone(), labels, k)?, km))
}
