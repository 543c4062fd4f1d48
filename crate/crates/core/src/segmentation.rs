//! Recursive binary segmentation of a group's time axis using the unbiased
//! MMD² statistic and a permutation-calibrated threshold.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{median_bandwidth_sq, rbf_kernel_matrix};
use crate::window::Points;

/// Half-open time interval `[start, end)`, zero-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start >= end {
            return Err(Error::invalid(format!("empty segment [{start}, {end})")));
        }
        Ok(Self { start, end })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    #[inline]
    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t < self.end
    }
}

/// Where the split-acceptance threshold is calibrated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Calibrate once on the full series and reuse it for every sub-interval.
    #[default]
    TopLevel,
    /// Recalibrate on every interval considered for a split.
    PerInterval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationConfig {
    pub l_min: usize,
    #[serde(default = "default_j_max")]
    pub j_max: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_permutations")]
    pub num_permutations: usize,
    #[serde(default)]
    pub threshold_mode: ThresholdMode,
    pub seed: u64,
}

fn default_j_max() -> usize {
    8
}
fn default_alpha() -> f64 {
    0.05
}
fn default_permutations() -> usize {
    200
}

impl SegmentationConfig {
    pub fn new(l_min: usize, seed: u64) -> Self {
        Self {
            l_min,
            j_max: default_j_max(),
            alpha: default_alpha(),
            num_permutations: default_permutations(),
            threshold_mode: ThresholdMode::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l_min < 2 {
            return Err(Error::invalid(format!("l_min must be at least 2, got {}", self.l_min)));
        }
        if self.j_max == 0 {
            return Err(Error::invalid("j_max must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.num_permutations == 0 {
            return Err(Error::invalid("num_permutations must be positive"));
        }
        Ok(())
    }
}

/// Segments of one feature group, tiling `[0, T)` in order.
#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub group_index: usize,
    pub segments: Vec<Segment>,
    /// Set when `T < l_min` and the single segment is shorter than `l_min`.
    pub under_length: bool,
    pub l_min: usize,
    pub alpha: f64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentationDoc {
    group: usize,
    /// One-based `[start, end)` pairs.
    segments: Vec<[usize; 2]>,
    l_min: usize,
    alpha: f64,
    seed: u64,
}

impl Segmentation {
    /// A single segment covering `[0, t_len)`.
    pub fn whole(group_index: usize, t_len: usize) -> Self {
        Self {
            group_index,
            segments: vec![Segment { start: 0, end: t_len }],
            under_length: false,
            l_min: 1,
            alpha: default_alpha(),
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn t_len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }

    /// Interior boundaries (start of every segment but the first).
    pub fn boundaries(&self) -> Vec<usize> {
        self.segments.iter().skip(1).map(|s| s.start).collect()
    }

    /// Checks that the segments tile `[0, t_len)` contiguously.
    pub fn validate(&self, t_len: usize) -> Result<()> {
        let mut cursor = 0;
        for s in &self.segments {
            if s.start != cursor || s.end <= s.start {
                return Err(Error::invalid(format!(
                    "group {}: segments do not tile the time axis at {cursor}",
                    self.group_index
                )));
            }
            cursor = s.end;
        }
        if cursor != t_len {
            return Err(Error::shape(format!("segments ending at T={t_len}"), cursor));
        }
        Ok(())
    }

    fn to_doc(&self) -> SegmentationDoc {
        SegmentationDoc {
            group: self.group_index,
            segments: self.segments.iter().map(|s| [s.start + 1, s.end + 1]).collect(),
            l_min: self.l_min,
            alpha: self.alpha,
            seed: self.seed,
        }
    }

    fn from_doc(doc: SegmentationDoc) -> Result<Self> {
        let segments = doc
            .segments
            .iter()
            .map(|&[s, e]| {
                if s == 0 {
                    return Err(Error::invalid("segment bounds are one-based"));
                }
                Segment::new(s - 1, e - 1)
            })
            .collect::<Result<Vec<_>>>()?;
        let seg = Self {
            group_index: doc.group,
            under_length: segments.len() == 1 && segments[0].len() < doc.l_min,
            segments,
            l_min: doc.l_min,
            alpha: doc.alpha,
            seed: doc.seed,
        };
        seg.validate(seg.t_len())?;
        Ok(seg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_doc(serde_json::from_str(s)?)
    }
}

impl Serialize for Segmentation {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_doc().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Segmentation {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = SegmentationDoc::deserialize(deserializer)?;
        Self::from_doc(doc).map_err(serde::de::Error::custom)
    }
}

/// The maximizing split of an interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Split {
    /// First row of the right-hand side, relative to the interval start.
    pub t: usize,
    pub stat: f64,
}

/// Gram matrix of one interval with 2-D prefix sums, so each candidate
/// split's MMD² costs O(1).
struct IntervalGram {
    n: usize,
    entries: Vec<f64>,
}

impl IntervalGram {
    fn new(block: Points<'_>, bandwidth_sq: f64) -> Result<Self> {
        let km = rbf_kernel_matrix(block, bandwidth_sq)?;
        Ok(Self { n: km.n, entries: km.entries })
    }

    fn with_median_bandwidth(block: Points<'_>) -> Result<Self> {
        Self::new(block, median_bandwidth_sq(block)?.sq)
    }

    /// Prefix sums of the Gram matrix with rows and columns reordered by `order`.
    fn prefix(&self, order: Option<&[usize]>) -> Prefix {
        let n = self.n;
        let w = n + 1;
        let mut p = vec![0.0; w * w];
        for i in 0..n {
            let ri = order.map_or(i, |o| o[i]);
            let mut row_acc = 0.0;
            for j in 0..n {
                let cj = order.map_or(j, |o| o[j]);
                row_acc += self.entries[ri * n + cj];
                p[(i + 1) * w + j + 1] = p[i * w + j + 1] + row_acc;
            }
        }
        Prefix { n, p }
    }
}

struct Prefix {
    n: usize,
    p: Vec<f64>,
}

impl Prefix {
    #[inline]
    fn rect(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> f64 {
        let w = self.n + 1;
        self.p[r1 * w + c1] - self.p[r0 * w + c1] - self.p[r1 * w + c0] + self.p[r0 * w + c0]
    }

    /// Unbiased MMD² of rows `[0, c)` against `[c, n)`. Diagonal entries are 1.
    fn split_stat(&self, c: usize) -> f64 {
        let n = self.n;
        let (l, r) = (c as f64, (n - c) as f64);
        let within_left = self.rect(0, c, 0, c) - l;
        let within_right = self.rect(c, n, c, n) - r;
        let cross = self.rect(0, c, c, n);
        within_left / (l * (l - 1.0)) + within_right / (r * (r - 1.0)) - 2.0 * cross / (l * r)
    }

    /// Best split over `t ∈ [l_min, n − l_min]`, ties to the smallest `t`.
    fn best(&self, l_min: usize) -> Option<Split> {
        if self.n < 2 * l_min {
            return None;
        }
        let mut best: Option<Split> = None;
        for t in l_min..=self.n - l_min {
            let stat = self.split_stat(t);
            if best.is_none_or(|b| stat > b.stat) {
                best = Some(Split { t, stat });
            }
        }
        best
    }
}

/// Best MMD² split of `block` (the rows of one interval) with both sides at
/// least `l_min` long. `None` when the interval is shorter than `2 * l_min`.
pub fn best_split(block: Points<'_>, l_min: usize, bandwidth_sq: f64) -> Result<Option<Split>> {
    if l_min < 2 {
        return Err(Error::invalid("l_min must be at least 2"));
    }
    if block.len() < 2 * l_min {
        return Ok(None);
    }
    Ok(IntervalGram::new(block, bandwidth_sq)?.prefix(None).best(l_min))
}

/// Nearest-rank `(1 − alpha)` quantile with the ceiling convention.
pub fn upper_quantile(values: &[f64], alpha: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = (((1.0 - alpha) * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[rank - 1]
}

fn null_max_stats(gram: &IntervalGram, l_min: usize, num_permutations: usize, seed: u64) -> Vec<f64> {
    (0..num_permutations)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let mut order: Vec<usize> = (0..gram.n).collect();
            order.shuffle(&mut rng);
            gram.prefix(Some(&order)).best(l_min).map_or(f64::NEG_INFINITY, |s| s.stat)
        })
        .collect()
}

/// Permutation-calibrated acceptance threshold for the maximal split
/// statistic of `block`, re-maximized over the same candidate splits.
pub fn permutation_threshold(
    block: Points<'_>,
    l_min: usize,
    alpha: f64,
    num_permutations: usize,
    seed: u64,
) -> Result<f64> {
    if l_min < 2 || block.len() < 2 * l_min {
        return Err(Error::invalid(format!(
            "interval of length {} has no candidate split for l_min={l_min}",
            block.len()
        )));
    }
    if num_permutations == 0 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("need num_permutations >= 1 and alpha in (0, 1)"));
    }
    let gram = IntervalGram::with_median_bandwidth(block)?;
    Ok(upper_quantile(&null_max_stats(&gram, l_min, num_permutations, seed), alpha))
}

fn mix_seed(seed: u64, a: usize, b: usize) -> u64 {
    // splitmix64 finalizer over the combined words.
    let mut z = seed ^ (a as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (b as u64).rotate_left(32);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Recursion<'a, 'b> {
    block: Points<'a>,
    config: &'b SegmentationConfig,
    top_threshold: Option<f64>,
    count: usize,
    cuts: Vec<usize>,
}

impl Recursion<'_, '_> {
    fn visit(&mut self, start: usize, end: usize) -> Result<()> {
        let l_min = self.config.l_min;
        if end - start < 2 * l_min || self.count >= self.config.j_max {
            return Ok(());
        }
        let gram = IntervalGram::with_median_bandwidth(self.block.slice(start..end))?;
        let Some(split) = gram.prefix(None).best(l_min) else {
            return Ok(());
        };
        let tau = match (self.config.threshold_mode, self.top_threshold) {
            (ThresholdMode::TopLevel, Some(tau)) => tau,
            (mode, _) => {
                let seed = match mode {
                    ThresholdMode::TopLevel => self.config.seed,
                    ThresholdMode::PerInterval => mix_seed(self.config.seed, start, end),
                };
                let null = null_max_stats(&gram, l_min, self.config.num_permutations, seed);
                let tau = upper_quantile(&null, self.config.alpha);
                if mode == ThresholdMode::TopLevel {
                    self.top_threshold = Some(tau);
                }
                tau
            }
        };
        if split.stat > tau && self.count < self.config.j_max {
            self.count += 1;
            let cut = start + split.t;
            self.cuts.push(cut);
            self.visit(start, cut)?;
            self.visit(cut, end)?;
        }
        Ok(())
    }
}

/// Segments one group's `T x |G|` block.
pub fn segment_group(block: Points<'_>, config: &SegmentationConfig) -> Result<Segmentation> {
    segment_group_indexed(block, config, 0)
}

pub fn segment_group_indexed(
    block: Points<'_>,
    config: &SegmentationConfig,
    group_index: usize,
) -> Result<Segmentation> {
    config.validate()?;
    let t_len = block.len();
    if t_len == 0 {
        return Err(Error::invalid("cannot segment an empty series"));
    }
    block.check_finite()?;
    let mut rec = Recursion { block, config, top_threshold: None, count: 1, cuts: Vec::new() };
    rec.visit(0, t_len)?;
    let mut cuts = rec.cuts;
    cuts.sort_unstable();
    let mut bounds = Vec::with_capacity(cuts.len() + 2);
    bounds.push(0);
    bounds.extend(cuts);
    bounds.push(t_len);
    let segments = bounds.windows(2).map(|w| Segment { start: w[0], end: w[1] }).collect();
    Ok(Segmentation {
        group_index,
        segments,
        under_length: t_len < config.l_min,
        l_min: config.l_min,
        alpha: config.alpha,
        seed: config.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::mmd2_unbiased;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng)).collect()
    }

    #[test]
    fn prefix_scan_matches_direct_mmd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..40 * 2).map(|_| rng.random::<f64>()).collect();
        let block = Points::new(&data, 2).unwrap();
        let gram = IntervalGram::new(block, 0.3).unwrap();
        let prefix = gram.prefix(None);
        for c in 2..=38 {
            let direct = mmd2_unbiased(block.slice(0..c), block.slice(c..40), 0.3).unwrap();
            assert!((prefix.split_stat(c) - direct).abs() < 1e-12, "c={c}");
        }
    }

    #[test]
    fn constant_block_has_nonpositive_stats() {
        let data = vec![1.5; 30];
        let s = best_split(Points::scalars(&data), 5, 1.0).unwrap().unwrap();
        assert!(s.stat <= 0.0);
        let gram = IntervalGram::new(Points::scalars(&data), 1.0).unwrap();
        let p = gram.prefix(None);
        assert!((5..=25).all(|c| p.split_stat(c) <= 0.0));
    }

    #[test]
    fn single_candidate_is_returned() {
        let data = noise(8, 1);
        let s = best_split(Points::scalars(&data), 4, 1.0).unwrap().unwrap();
        assert_eq!(s.t, 4);
        assert!(best_split(Points::scalars(&data[..7]), 4, 1.0).unwrap().is_none());
    }

    #[test]
    fn step_series_argmax_near_change() {
        // Brute-force scan with the direct estimator as the oracle.
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..128)
                .map(|t| if t < 63 { 0.0 } else { 5.0 } + 0.1 * Normal::new(0.0, 1.0).unwrap().sample(&mut rng))
                .collect();
            let block = Points::scalars(&data);
            let bw = median_bandwidth_sq(block).unwrap().sq;
            let split = best_split(block, 13, bw).unwrap().unwrap();
            let oracle = (13..=115)
                .map(|t| (t, mmd2_unbiased(block.slice(0..t), block.slice(t..128), bw).unwrap()))
                .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
            assert_eq!(split.t, oracle.0, "seed {seed}");
            // One-based position of the first right-hand row.
            assert!((62..=66).contains(&(split.t + 1)), "seed {seed}: t*={}", split.t);
        }
    }

    #[test]
    fn quantile_convention() {
        let values: Vec<f64> = (1..=200).map(f64::from).collect();
        assert_eq!(upper_quantile(&values, 0.05), 190.0);
        assert_eq!(upper_quantile(&[3.0; 17], 0.2), 3.0);
        assert_eq!(upper_quantile(&[1.0, 2.0], 0.5), 1.0);
    }

    #[test]
    fn threshold_deterministic() {
        let data = noise(60, 4);
        let a = permutation_threshold(Points::scalars(&data), 6, 0.05, 50, 7).unwrap();
        let b = permutation_threshold(Points::scalars(&data), 6, 0.05, 50, 7).unwrap();
        assert_eq!(a, b);
        let constant = vec![2.0; 30];
        assert_eq!(permutation_threshold(Points::scalars(&constant), 5, 0.05, 20, 1).unwrap(), 0.0);
    }

    #[test]
    fn short_series_single_segment() {
        let data = noise(3, 1);
        let seg = segment_group(Points::scalars(&data), &SegmentationConfig::new(4, 0)).unwrap();
        assert_eq!(seg.segments, vec![Segment { start: 0, end: 3 }]);
        assert!(seg.under_length);
        let data = noise(7, 1);
        let seg = segment_group(Points::scalars(&data), &SegmentationConfig::new(4, 0)).unwrap();
        assert!(!seg.under_length);
        assert_eq!(seg.len(), 1);
    }

    #[test]
    fn mean_shift_split() {
        let mut data = noise(128, 11);
        data[64..].iter_mut().for_each(|v| *v += 3.0);
        for mode in [ThresholdMode::TopLevel, ThresholdMode::PerInterval] {
            let cfg = SegmentationConfig { threshold_mode: mode, ..SegmentationConfig::new(13, 5) };
            let seg = segment_group(Points::scalars(&data), &cfg).unwrap();
            seg.validate(128).unwrap();
            assert!(seg.boundaries().iter().any(|b| b.abs_diff(64) <= 2), "{mode:?}: {seg:?}");
        }
    }

    #[test]
    fn j_max_caps_segments() {
        let data: Vec<f64> = (0..120).map(|t| ((t / 10) % 2) as f64 * 4.0).collect();
        let cfg = SegmentationConfig { j_max: 3, ..SegmentationConfig::new(4, 1) };
        let seg = segment_group(Points::scalars(&data), &cfg).unwrap();
        assert!(seg.len() <= 3);
        let cfg = SegmentationConfig { j_max: 1, ..SegmentationConfig::new(4, 1) };
        assert_eq!(segment_group(Points::scalars(&data), &cfg).unwrap().len(), 1);
    }

    #[test]
    fn sp500_setting_respects_l_min() {
        for seed in 0..10 {
            let mut data = noise(20, seed);
            data[10..].iter_mut().for_each(|v| *v += 4.0);
            let seg = segment_group(Points::scalars(&data), &SegmentationConfig::new(4, seed)).unwrap();
            seg.validate(20).unwrap();
            assert!(seg.segments.iter().all(|s| s.len() >= 4));
        }
    }

    #[test]
    fn shift_invariance_on_dyadic_data() {
        let mut data: Vec<f64> = noise(96, 3).iter().map(|v| (v * 64.0).round() / 64.0).collect();
        data[40..].iter_mut().for_each(|v| *v += 2.0);
        let shifted: Vec<f64> = data.iter().map(|v| v + 16.0).collect();
        let cfg = SegmentationConfig::new(10, 2);
        let a = segment_group(Points::scalars(&data), &cfg).unwrap();
        let b = segment_group(Points::scalars(&shifted), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn json_round_trip_is_one_based() {
        let seg = Segmentation {
            group_index: 1,
            segments: vec![Segment { start: 0, end: 4 }, Segment { start: 4, end: 8 }],
            under_length: false,
            l_min: 4,
            alpha: 0.05,
            seed: 3,
        };
        let json = seg.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["segments"], serde_json::json!([[1, 5], [5, 9]]));
        assert_eq!(Segmentation::from_json(&json).unwrap(), seg);
    }

    #[test]
    fn config_validation() {
        assert!(SegmentationConfig::new(1, 0).validate().is_err());
        let cfg = SegmentationConfig { alpha: 1.0, ..SegmentationConfig::new(4, 0) };
        assert!(cfg.validate().is_err());
    }
}
