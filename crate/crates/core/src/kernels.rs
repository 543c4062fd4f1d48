//! RBF kernels, median-heuristic bandwidths, and the HSIC and MMD² estimators.
//!
//! Every kernel here is `k(x, y) = exp(-‖x − y‖² / (2σ²))` with `σ²` taken as
//! the median of the strictly positive squared pairwise distances.

use crate::error::{Error, Result};
use crate::window::{Points, Sample1D};

/// A squared RBF bandwidth `σ²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bandwidth {
    pub sq: f64,
    /// Set when every pairwise distance was zero and `sq` is the fallback 1.
    pub degenerate: bool,
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn rbf(sq_dist: f64, bandwidth_sq: f64) -> f64 {
    (-sq_dist / (2.0 * bandwidth_sq)).exp()
}

fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Median heuristic for `σ²`. Falls back to 1 (flagged degenerate) when all
/// points coincide.
pub fn median_bandwidth_sq(points: Points<'_>) -> Result<Bandwidth> {
    let n = points.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "median heuristic needs at least 2 points, got {n}"
        )));
    }
    points.check_finite()?;
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let xi = points.point(i);
        for j in i + 1..n {
            let d = squared_distance(xi, points.point(j));
            if d > 0.0 {
                dists.push(d);
            }
        }
    }
    if dists.is_empty() {
        return Ok(Bandwidth { sq: 1.0, degenerate: true });
    }
    Ok(Bandwidth { sq: median_in_place(&mut dists), degenerate: false })
}

fn check_bandwidth(bandwidth_sq: f64) -> Result<()> {
    if !(bandwidth_sq.is_finite() && bandwidth_sq > 0.0) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth_sq}")));
    }
    Ok(())
}

/// A dense RBF Gram matrix.
#[derive(Clone, Debug)]
pub struct KernelMatrix {
    pub n: usize,
    pub bandwidth_sq: f64,
    /// Row-major `n x n`.
    pub entries: Vec<f64>,
}

impl KernelMatrix {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }
}

pub fn rbf_kernel_matrix(points: Points<'_>, bandwidth_sq: f64) -> Result<KernelMatrix> {
    check_bandwidth(bandwidth_sq)?;
    points.check_finite()?;
    let n = points.len();
    let mut entries = vec![1.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let k = rbf(squared_distance(points.point(i), points.point(j)), bandwidth_sq);
            entries[i * n + j] = k;
            entries[j * n + i] = k;
        }
    }
    Ok(KernelMatrix { n, bandwidth_sq, entries })
}

/// Biased HSIC `tr(HKHL) / (n − 1)²` with per-variable median bandwidths.
pub fn hsic(x: &Sample1D, y: &Sample1D) -> Result<f64> {
    check_hsic_lengths(x, y)?;
    let bx = median_bandwidth_sq(x.points())?;
    let by = median_bandwidth_sq(y.points())?;
    if bx.degenerate || by.degenerate {
        return Ok(0.0);
    }
    hsic_with_bandwidths(x, y, bx.sq, by.sq)
}

fn check_hsic_lengths(x: &Sample1D, y: &Sample1D) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::shape(format!("samples of length {}", x.len()), y.len()));
    }
    if x.len() < 4 {
        return Err(Error::invalid(format!("HSIC needs n >= 4, got {}", x.len())));
    }
    Ok(())
}

/// HSIC with caller-fixed bandwidths.
///
/// Uses `tr(HKHL) = Σ K∘L − (2/n) Σ_i k_i l_i + (ΣK)(ΣL)/n²`, where `k_i`
/// and `l_i` are row sums, so only O(n) memory is needed.
pub fn hsic_with_bandwidths(
    x: &Sample1D,
    y: &Sample1D,
    bandwidth_x: f64,
    bandwidth_y: f64,
) -> Result<f64> {
    check_hsic_lengths(x, y)?;
    check_bandwidth(bandwidth_x)?;
    check_bandwidth(bandwidth_y)?;
    let (xs, ys) = (x.values(), y.values());
    let n = xs.len();
    let mut row_k = vec![1.0; n];
    let mut row_l = vec![1.0; n];
    // Diagonal entries are all 1.
    let mut sum_kl = n as f64;
    for i in 0..n {
        for j in i + 1..n {
            let dx = xs[i] - xs[j];
            let dy = ys[i] - ys[j];
            let k = rbf(dx * dx, bandwidth_x);
            let l = rbf(dy * dy, bandwidth_y);
            row_k[i] += k;
            row_k[j] += k;
            row_l[i] += l;
            row_l[j] += l;
            sum_kl += 2.0 * k * l;
        }
    }
    Ok(centered_trace(sum_kl, &row_k, &row_l) / ((n - 1) as f64).powi(2))
}

fn centered_trace(sum_kl: f64, row_k: &[f64], row_l: &[f64]) -> f64 {
    let n = row_k.len() as f64;
    let cross: f64 = row_k.iter().zip(row_l).map(|(a, b)| a * b).sum();
    let total_k: f64 = row_k.iter().sum();
    let total_l: f64 = row_l.iter().sum();
    sum_kl - 2.0 * cross / n + total_k * total_l / (n * n)
}

/// Precomputed Gram matrix of one variable, reused across all pairs when
/// building an affinity matrix.
#[derive(Clone, Debug)]
pub(crate) struct CachedGram {
    entries: Vec<f64>,
    row_sums: Vec<f64>,
    degenerate: bool,
}

impl CachedGram {
    pub(crate) fn new(sample: &Sample1D) -> Result<Self> {
        let bw = median_bandwidth_sq(sample.points())?;
        let km = rbf_kernel_matrix(sample.points(), bw.sq)?;
        let n = km.n;
        let row_sums = (0..n).map(|i| km.entries[i * n..(i + 1) * n].iter().sum()).collect();
        Ok(Self { entries: km.entries, row_sums, degenerate: bw.degenerate })
    }

    pub(crate) fn hsic(&self, other: &CachedGram) -> f64 {
        if self.degenerate || other.degenerate {
            return 0.0;
        }
        let n = self.row_sums.len();
        let sum_kl: f64 = self.entries.iter().zip(&other.entries).map(|(a, b)| a * b).sum();
        centered_trace(sum_kl, &self.row_sums, &other.row_sums) / ((n - 1) as f64).powi(2)
    }
}

/// Unbiased MMD² between two samples with a fixed bandwidth. May be negative.
pub fn mmd2_unbiased(left: Points<'_>, right: Points<'_>, bandwidth_sq: f64) -> Result<f64> {
    check_bandwidth(bandwidth_sq)?;
    let (n, m) = (left.len(), right.len());
    if n < 2 || m < 2 {
        return Err(Error::invalid(format!(
            "MMD needs at least 2 points per side, got {n} and {m}"
        )));
    }
    if left.dim() != right.dim() {
        return Err(Error::shape(left.dim(), right.dim()));
    }
    left.check_finite()?;
    right.check_finite()?;
    let within = |p: Points<'_>| {
        let mut s = 0.0;
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                s += rbf(squared_distance(p.point(i), p.point(j)), bandwidth_sq);
            }
        }
        2.0 * s
    };
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..m {
            cross += rbf(squared_distance(left.point(i), right.point(j)), bandwidth_sq);
        }
    }
    let (nf, mf) = (n as f64, m as f64);
    Ok(within(left) / (nf * (nf - 1.0)) + within(right) / (mf * (mf - 1.0))
        - 2.0 * cross / (nf * mf))
}
