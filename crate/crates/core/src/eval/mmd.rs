use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;

use crate::error::{ensure, Result};
use crate::tensor::Tensor;

/// At most this many pooled rows (taken at an even stride) enter the median.
pub const MEDIAN_SUBSET: usize = 1024;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check(a: &Tensor, b: &Tensor) -> Result<()> {
    ensure!(a.rows() > 0 && b.rows() > 0, "sample sets must be nonempty");
    ensure!(a.cols() == b.cols(), "dimension mismatch: {} vs {}", a.cols(), b.cols());
    Ok(())
}

/// Median pairwise distance over the pooled sample.
pub fn median_bandwidth(a: &Tensor, b: &Tensor) -> Result<f64> {
    check(a, b)?;
    let total = a.rows() + b.rows();
    let stride = total.div_ceil(MEDIAN_SUBSET).max(1);
    let rows: Vec<&[f64]> = (0..total)
        .step_by(stride)
        .map(|i| if i < a.rows() { a.row_slice(i) } else { b.row_slice(i - a.rows()) })
        .collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len() / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(rows[i], rows[j]).sqrt());
        }
    }
    ensure!(!d.is_empty(), "need at least two points for the median heuristic");
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, |x, y| x.total_cmp(y));
    let m = *m;
    Ok(if m > 0.0 { m } else { 1.0 })
}

struct KernelSums {
    xx: f64,
    yy: f64,
    xy: f64,
    xx_diag: f64,
    yy_diag: f64,
}

fn kernel_sums(x: &Tensor, y: &Tensor, bandwidth: f64) -> Result<KernelSums> {
    check(x, y)?;
    ensure!(bandwidth > 0.0 && bandwidth.is_finite(), "bandwidth must be positive");
    let g = 1.0 / (2.0 * bandwidth * bandwidth);
    let k = |a: &[f64], b: &[f64]| (-g * sq_dist(a, b)).exp();
    let within = |t: &Tensor| {
        let mut s = 0.0;
        for i in 0..t.rows() {
            for j in i + 1..t.rows() {
                s += k(t.row_slice(i), t.row_slice(j));
            }
        }
        2.0 * s
    };
    let mut xy = 0.0;
    for i in 0..x.rows() {
        for j in 0..y.rows() {
            xy += k(x.row_slice(i), y.row_slice(j));
        }
    }
    Ok(KernelSums { xx: within(x), yy: within(y), xy, xx_diag: x.rows() as f64, yy_diag: y.rows() as f64 })
}

/// Unbiased Gaussian-kernel MMD², `k(a, b) = exp(-|a - b|² / (2 h²))`.
/// Needs at least two rows per set.
pub fn mmd_unbiased(x: &Tensor, y: &Tensor, bandwidth: f64) -> Result<f64> {
    check(x, y)?;
    ensure!(x.rows() >= 2 && y.rows() >= 2, "unbiased estimate needs two points per set");
    let s = kernel_sums(x, y, bandwidth)?;
    let (n, m) = (x.rows() as f64, y.rows() as f64);
    Ok(s.xx / (n * (n - 1.0)) + s.yy / (m * (m - 1.0)) - 2.0 * s.xy / (n * m))
}

/// Biased (V-statistic) MMD²; never negative.
pub fn mmd_biased(x: &Tensor, y: &Tensor, bandwidth: f64) -> Result<f64> {
    let s = kernel_sums(x, y, bandwidth)?;
    let (n, m) = (x.rows() as f64, y.rows() as f64);
    let v = (s.xx + s.xx_diag) / (n * n) + (s.yy + s.yy_diag) / (m * m) - 2.0 * s.xy / (n * m);
    Ok(v.max(0.0))
}
