//! Variable grouping: dependence affinities, normalized-Laplacian spectral
//! clustering with eigengap model selection, and quality refinement.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, CachedGram};
use crate::linalg::{symmetric_eigen, SymmetricEigen};
use crate::window::{Sample1D, Window};

/// Above this many bytes of cached Gram matrices the affinity falls back to
/// streaming each pair.
const GRAM_CACHE_BUDGET: usize = 512 << 20;
const KMEANS_MAX_ITER: usize = 100;
const EIGENGAP_TIE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupingMethod {
    Hsic,
    Pearson,
    Random,
    None,
}

impl GroupingMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupingMethod::Hsic => "hsic",
            GroupingMethod::Pearson => "pearson",
            GroupingMethod::Random => "random",
            GroupingMethod::None => "none",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupingConfig {
    #[serde(default = "default_subsample")]
    pub n_hsic_subsample: usize,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_quality")]
    pub quality_threshold: f64,
    #[serde(default = "default_refine_depth")]
    pub max_refine_depth: usize,
    pub seed: u64,
}

fn default_subsample() -> usize {
    3000
}
fn default_k_max() -> usize {
    6
}
fn default_quality() -> f64 {
    1e-3
}
fn default_refine_depth() -> usize {
    5
}

impl GroupingConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            n_hsic_subsample: default_subsample(),
            k_max: default_k_max(),
            quality_threshold: default_quality(),
            max_refine_depth: default_refine_depth(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_hsic_subsample < 4 {
            return Err(Error::invalid("n_hsic_subsample must be at least 4"));
        }
        if self.k_max == 0 {
            return Err(Error::invalid("k_max must be positive"));
        }
        if !(self.quality_threshold.is_finite() && self.quality_threshold > 0.0) {
            return Err(Error::invalid("quality_threshold must be positive"));
        }
        Ok(())
    }
}

/// A partition of the variable indices `0..D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grouping {
    pub method: GroupingMethod,
    pub groups: Vec<Vec<usize>>,
    pub variable_names: Vec<String>,
    pub seed: u64,
}

pub fn default_variable_names(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("x{i}")).collect()
}

impl Grouping {
    /// Normalizes member and group order and checks the partition.
    pub fn new(
        method: GroupingMethod,
        mut groups: Vec<Vec<usize>>,
        variable_names: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        groups.retain(|g| !g.is_empty());
        for g in &mut groups {
            g.sort_unstable();
        }
        groups.sort_by_key(|g| g[0]);
        let grouping = Self { method, groups, variable_names, seed };
        grouping.validate()?;
        Ok(grouping)
    }

    pub fn singletons(d: usize, method: GroupingMethod, seed: u64) -> Self {
        Self {
            method,
            groups: (0..d).map(|i| vec![i]).collect(),
            variable_names: default_variable_names(d),
            seed,
        }
    }

    pub fn n_variables(&self) -> usize {
        self.variable_names.len()
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Group index of every variable.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![usize::MAX; self.n_variables()];
        for (k, g) in self.groups.iter().enumerate() {
            for &d in g {
                labels[d] = k;
            }
        }
        labels
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.variable_names.len();
        let mut seen = vec![false; d];
        for g in &self.groups {
            if g.is_empty() {
                return Err(Error::invalid("empty group"));
            }
            for &v in g {
                if v >= d {
                    return Err(Error::invalid(format!("variable {v} out of range for D={d}")));
                }
                if std::mem::replace(&mut seen[v], true) {
                    return Err(Error::invalid(format!("variable {v} in more than one group")));
                }
            }
        }
        if let Some(v) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("variable {v} not in any group")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: Grouping = serde_json::from_str(s)?;
        Grouping::new(g.method, g.groups, g.variable_names, g.seed)
    }
}

/// Symmetric, non-negative `D x D` pairwise dependence scores.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMatrix {
    pub d: usize,
    /// Row-major; the diagonal is zero.
    pub entries: Vec<f64>,
}

impl AffinityMatrix {
    pub fn new(d: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != d * d {
            return Err(Error::shape(d * d, entries.len()));
        }
        for i in 0..d {
            for j in 0..d {
                let a = entries[i * d + j];
                if !a.is_finite() || a < 0.0 {
                    return Err(Error::invalid(format!("affinity ({i},{j}) = {a}")));
                }
                if (a - entries[j * d + i]).abs() > 1e-12 * (1.0 + a.abs()) {
                    return Err(Error::invalid("affinity must be symmetric"));
                }
            }
        }
        let mut m = Self { d, entries };
        for i in 0..d {
            m.entries[i * d + i] = 0.0;
        }
        Ok(m)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.d + j]
    }

    pub fn submatrix(&self, indices: &[usize]) -> AffinityMatrix {
        let n = indices.len();
        let mut entries = Vec::with_capacity(n * n);
        for &i in indices {
            entries.extend(indices.iter().map(|&j| self.get(i, j)));
        }
        AffinityMatrix { d: n, entries }
    }

    /// Mean absolute off-diagonal affinity among `members`.
    pub fn within_mean(&self, members: &[usize]) -> f64 {
        let n = members.len();
        if n < 2 {
            return 0.0;
        }
        let mut s = 0.0;
        for &i in members {
            for &j in members {
                if i != j {
                    s += self.get(i, j).abs();
                }
            }
        }
        s / (n * (n - 1)) as f64
    }
}

/// Pools every time step of every window and subsamples the pool without
/// replacement; the same rows are kept for all variables.
pub fn pooled_background_samples(
    windows: &[Window],
    config: &GroupingConfig,
) -> Result<Vec<Sample1D>> {
    let first = windows.first().ok_or_else(|| Error::invalid("no background windows"))?;
    let d = first.d_len();
    if let Some(w) = windows.iter().find(|w| w.d_len() != d) {
        return Err(Error::shape(format!("D={d}"), format!("D={}", w.d_len())));
    }
    let total: usize = windows.iter().map(Window::t_len).sum();
    let rows: Vec<&[f64]> = windows.iter().flat_map(|w| (0..w.t_len()).map(|t| w.row(t))).collect();
    let keep: Vec<usize> = if total > config.n_hsic_subsample {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut idx = rand::seq::index::sample(&mut rng, total, config.n_hsic_subsample).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..total).collect()
    };
    (0..d)
        .map(|v| Sample1D::new(keep.iter().map(|&i| rows[i][v]).collect()))
        .collect()
}

fn check_aligned(samples: &[Sample1D]) -> Result<usize> {
    let n = samples.first().map_or(0, Sample1D::len);
    if let Some(s) = samples.iter().find(|s| s.len() != n) {
        return Err(Error::shape(format!("aligned samples of length {n}"), s.len()));
    }
    Ok(n)
}

fn pairwise<F>(d: usize, score: F) -> Result<AffinityMatrix>
where
    F: Fn(usize, usize) -> Result<f64> + Sync,
{
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i + 1..d).map(move |j| (i, j))).collect();
    let values = pairs
        .par_iter()
        .map(|&(i, j)| score(i, j))
        .collect::<Result<Vec<f64>>>()?;
    let mut entries = vec![0.0; d * d];
    for (&(i, j), v) in pairs.iter().zip(values) {
        // Floating error can push a near-zero HSIC slightly negative.
        let v = v.max(0.0);
        entries[i * d + j] = v;
        entries[j * d + i] = v;
    }
    Ok(AffinityMatrix { d, entries })
}

/// Pairwise HSIC between all variables, diagonal zeroed.
pub fn hsic_affinity(samples: &[Sample1D]) -> Result<AffinityMatrix> {
    let n = check_aligned(samples)?;
    if n < 4 {
        return Err(Error::invalid(format!("HSIC needs n >= 4, got {n}")));
    }
    let d = samples.len();
    if d.saturating_mul(n).saturating_mul(n).saturating_mul(8) <= GRAM_CACHE_BUDGET {
        let grams = samples
            .par_iter()
            .map(CachedGram::new)
            .collect::<Result<Vec<_>>>()?;
        pairwise(d, |i, j| Ok(grams[i].hsic(&grams[j])))
    } else {
        pairwise(d, |i, j| kernels::hsic(&samples[i], &samples[j]))
    }
}

/// Absolute Pearson correlation between all variables, diagonal zeroed.
/// Constant variables get zero affinity.
pub fn pearson_affinity(samples: &[Sample1D]) -> Result<AffinityMatrix> {
    let n = check_aligned(samples)?;
    if n < 2 {
        return Err(Error::invalid("correlation needs at least 2 observations"));
    }
    let centered: Vec<(Vec<f64>, f64)> = samples
        .iter()
        .map(|s| {
            let mean = s.values().iter().sum::<f64>() / n as f64;
            let c: Vec<f64> = s.values().iter().map(|v| v - mean).collect();
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            (c, norm)
        })
        .collect();
    pairwise(samples.len(), |i, j| {
        let (a, na) = &centered[i];
        let (b, nb) = &centered[j];
        if *na == 0.0 || *nb == 0.0 {
            return Ok(0.0);
        }
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        Ok((dot / (na * nb)).abs().min(1.0))
    })
}

/// Normalized Laplacian over the variables with non-zero degree.
#[derive(Clone, Debug)]
pub struct Laplacian {
    /// Indices (into the affinity) of the variables in `matrix`, ascending.
    pub active: Vec<usize>,
    /// Zero-degree variables, split out as forced singletons.
    pub singletons: Vec<usize>,
    /// Row-major `active.len()` square matrix `I − Δ^{-1/2} A Δ^{-1/2}`.
    pub matrix: Vec<f64>,
}

impl Laplacian {
    pub fn size(&self) -> usize {
        self.active.len()
    }
}

pub fn normalized_laplacian(affinity: &AffinityMatrix) -> Laplacian {
    let d = affinity.d;
    let degree: Vec<f64> = (0..d)
        .map(|i| (0..d).filter(|&j| j != i).map(|j| affinity.get(i, j)).sum())
        .collect();
    let (active, singletons): (Vec<usize>, Vec<usize>) = (0..d).partition(|&i| degree[i] > 0.0);
    let n = active.len();
    let inv_sqrt: Vec<f64> = active.iter().map(|&i| 1.0 / degree[i].sqrt()).collect();
    let mut matrix = vec![0.0; n * n];
    for (a, &i) in active.iter().enumerate() {
        matrix[a * n + a] = 1.0;
        for (b, &j) in active.iter().enumerate().skip(a + 1) {
            let off = affinity.get(i, j) * inv_sqrt[a] * inv_sqrt[b];
            matrix[a * n + b] = -off;
            matrix[b * n + a] = -off;
        }
    }
    Laplacian { active, singletons, matrix }
}

/// Number of clusters from the largest gap in an ascending spectrum, capped
/// at `k_max`. Ties go to the smallest `k`.
pub fn eigengap_k(eigenvalues: &[f64], k_max: usize) -> usize {
    if eigenvalues.len() < 2 {
        return 1;
    }
    let upper = k_max.min(eigenvalues.len() - 1).max(1);
    let mut best_k = 1;
    let mut best_gap = f64::NEG_INFINITY;
    for k in 1..=upper {
        let gap = eigenvalues[k] - eigenvalues[k - 1];
        if gap > best_gap + EIGENGAP_TIE_TOL {
            best_gap = gap;
            best_k = k;
        }
    }
    best_k
}

/// Seeded Lloyd k-means with greedy farthest-point initialization.
/// Returns one cluster label per point.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    let n = points.len();
    if n == 0 || k == 0 {
        return vec![0; n];
    }
    let k = k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    while centroids.len() < k {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, p) in points.iter().enumerate() {
            let dmin = centroids
                .iter()
                .map(|c| kernels::squared_distance(p, c))
                .fold(f64::INFINITY, f64::min);
            if dmin > best.1 {
                best = (i, dmin);
            }
        }
        centroids.push(points[best.0].clone());
    }

    let nearest = |p: &[f64], centroids: &[Vec<f64>]| {
        let mut best = (0, f64::INFINITY);
        for (c, centroid) in centroids.iter().enumerate() {
            let dist = kernels::squared_distance(p, centroid);
            if dist < best.1 {
                best = (c, dist);
            }
        }
        best.0
    };

    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    for _ in 0..KMEANS_MAX_ITER {
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

/// Spectral embedding of the Laplacian into its `k` lowest eigenvectors,
/// rows normalized to unit length.
fn spectral_embedding(eig: &SymmetricEigen, k: usize) -> Vec<Vec<f64>> {
    (0..eig.n)
        .map(|i| {
            let mut row: Vec<f64> = (0..k).map(|j| eig.vectors[i * eig.n + j]).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
            row
        })
        .collect()
}

fn cluster_laplacian(lap: &Laplacian, eig: &SymmetricEigen, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let labels = kmeans(&spectral_embedding(eig, k), k, seed);
    let mut clusters = vec![Vec::new(); k];
    for (a, &l) in labels.iter().enumerate() {
        clusters[l].push(lap.active[a]);
    }
    clusters.retain(|c| !c.is_empty());
    clusters
}

/// Spectral clustering of an affinity into `k` groups in total; zero-degree
/// variables count towards `k` as forced singletons.
pub fn spectral_cluster(affinity: &AffinityMatrix, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > affinity.d {
        return Err(Error::invalid(format!("cannot form {k} clusters from {} variables", affinity.d)));
    }
    let lap = normalized_laplacian(affinity);
    let mut groups: Vec<Vec<usize>> = lap.singletons.iter().map(|&i| vec![i]).collect();
    if lap.size() > 0 {
        let k_active = k.saturating_sub(lap.singletons.len()).max(1);
        if k_active > lap.size() {
            return Err(Error::invalid(format!(
                "cannot form {k_active} clusters from {} connected variables",
                lap.size()
            )));
        }
        let eig = symmetric_eigen(&lap.matrix, lap.size());
        groups.extend(cluster_laplacian(&lap, &eig, k_active, seed));
    }
    Ok(groups)
}

/// Eigengap-selected spectral clustering of `indices` with quality
/// refinement. Groups are in terms of the full affinity's indices.
fn refine_partition(
    affinity: &AffinityMatrix,
    indices: &[usize],
    config: &GroupingConfig,
    depth: usize,
) -> Vec<Vec<usize>> {
    if indices.len() <= 1 {
        return vec![indices.to_vec()];
    }
    let sub = affinity.submatrix(indices);
    let lap = normalized_laplacian(&sub);
    let mut groups: Vec<Vec<usize>> = lap.singletons.iter().map(|&i| vec![indices[i]]).collect();
    let clusters = match lap.size() {
        0 => Vec::new(),
        1 => vec![vec![lap.active[0]]],
        n => {
            let eig = symmetric_eigen(&lap.matrix, n);
            let k = eigengap_k(&eig.values, config.k_max);
            cluster_laplacian(&lap, &eig, k, config.seed)
        }
    };
    for cluster in clusters {
        let members: Vec<usize> = cluster.iter().map(|&i| indices[i]).collect();
        if members.len() >= 2 && affinity.within_mean(&members) < config.quality_threshold {
            if depth < config.max_refine_depth {
                groups.extend(refine_partition(affinity, &members, config, depth + 1));
            } else {
                groups.extend(members.into_iter().map(|m| vec![m]));
            }
        } else {
            groups.push(members);
        }
    }
    groups
}

/// Groups the variables of an affinity matrix: forced singletons, eigengap,
/// spectral clustering, then refinement of low-quality clusters.
pub fn cluster_affinity(
    affinity: &AffinityMatrix,
    method: GroupingMethod,
    config: &GroupingConfig,
) -> Result<Grouping> {
    config.validate()?;
    let all: Vec<usize> = (0..affinity.d).collect();
    let groups = refine_partition(affinity, &all, config, 0);
    Grouping::new(method, groups, default_variable_names(affinity.d), config.seed)
}

fn check_windows(windows: &[Window]) -> Result<usize> {
    let d = windows.first().ok_or_else(|| Error::invalid("no background windows"))?.d_len();
    if windows.iter().any(|w| w.d_len() != d) {
        return Err(Error::invalid("background windows disagree on D"));
    }
    Ok(d)
}

/// Full HSIC grouping pipeline over background windows.
pub fn group_features(windows: &[Window], config: &GroupingConfig) -> Result<Grouping> {
    config.validate()?;
    let d = check_windows(windows)?;
    if d == 1 {
        return Ok(Grouping::singletons(1, GroupingMethod::Hsic, config.seed));
    }
    let samples = pooled_background_samples(windows, config)?;
    cluster_affinity(&hsic_affinity(&samples)?, GroupingMethod::Hsic, config)
}

/// Seeded uniform assignment of `d` variables into `k` non-empty groups.
pub fn random_grouping(d: usize, k: usize, seed: u64) -> Result<Grouping> {
    if k == 0 || k > d {
        return Err(Error::invalid(format!("cannot split {d} variables into {k} groups")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(&mut rng);
    let mut groups = vec![Vec::new(); k];
    for (i, &v) in order.iter().enumerate() {
        let g = if i < k { i } else { rng.random_range(0..k) };
        groups[g].push(v);
    }
    Grouping::new(GroupingMethod::Random, groups, default_variable_names(d), seed)
}

/// Comparison groupings: Pearson-affinity clustering, random, or none.
pub fn alternative_grouping(
    windows: &[Window],
    method: GroupingMethod,
    k_hint: usize,
    config: &GroupingConfig,
) -> Result<Grouping> {
    let d = check_windows(windows)?;
    match method {
        GroupingMethod::Hsic => group_features(windows, config),
        GroupingMethod::Pearson => {
            if d == 1 {
                return Ok(Grouping::singletons(1, method, config.seed));
            }
            let samples = pooled_background_samples(windows, config)?;
            cluster_affinity(&pearson_affinity(&samples)?, method, config)
        }
        GroupingMethod::Random => random_grouping(d, k_hint, config.seed),
        GroupingMethod::None => Ok(Grouping::singletons(d, method, config.seed)),
    }
}
