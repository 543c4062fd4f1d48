//! Shapley attribution over a player set: coalition masking, permutation
//! sampling and exact enumeration.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::players::PlayerSet;
use crate::predictors::Predictor;
use crate::window::Window;

/// Largest player count accepted by [`shapley_exact`].
pub const MAX_EXACT_PLAYERS: usize = 20;

/// Upper bound on `windows × cells` held in one predictor batch.
const MAX_BATCH_CELLS: usize = 1 << 22;

/// A subset of players as a bit vector indexed by player id.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Coalition {
    bits: Vec<bool>,
}

impl Coalition {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn empty(n: usize) -> Self {
        Self { bits: vec![false; n] }
    }

    pub fn full(n: usize) -> Self {
        Self { bits: vec![true; n] }
    }

    pub fn from_members(n: usize, members: &[usize]) -> Result<Self> {
        let mut c = Self::empty(n);
        for &p in members {
            if p >= n {
                return Err(Error::invalid(format!("player {p} outside 0..{n}")));
            }
            c.bits[p] = true;
        }
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn contains(&self, p: usize) -> bool {
        self.bits[p]
    }

    pub fn insert(&mut self, p: usize) {
        self.bits[p] = true;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

/// Replacement value used for cells of absent players.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskingMode {
    /// Per-variable background mean.
    #[default]
    Mean,
    Zero,
    /// Gaussian draw `μ_d + σ_d·z`, fixed per `(seed, t, d)`.
    Noise,
}

impl MaskingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskingMode::Mean => "mean",
            MaskingMode::Zero => "zero",
            MaskingMode::Noise => "noise",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskingBaseline {
    pub mode: MaskingMode,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub seed: u64,
}

impl MaskingBaseline {
    pub fn new(mode: MaskingMode, mu: Vec<f64>, sigma: Vec<f64>, seed: u64) -> Result<Self> {
        let b = Self { mode, mu, sigma, seed };
        b.validate()?;
        Ok(b)
    }

    /// Feature-wise mean and population standard deviation over every cell of
    /// the background windows.
    pub fn from_background(background: &[Window], mode: MaskingMode, seed: u64) -> Result<Self> {
        let first = background
            .first()
            .ok_or_else(|| Error::invalid("background window set is empty"))?;
        let d_len = first.d_len();
        let mut sum = vec![0.0; d_len];
        let mut count = 0usize;
        for w in background {
            if w.d_len() != d_len {
                return Err(Error::shape(format!("D={d_len}"), format!("D={}", w.d_len())));
            }
            for t in 0..w.t_len() {
                for (s, x) in sum.iter_mut().zip(w.row(t)) {
                    *s += x;
                }
            }
            count += w.t_len();
        }
        let mu: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; d_len];
        for w in background {
            for t in 0..w.t_len() {
                for ((s, x), m) in sq.iter_mut().zip(w.row(t)).zip(&mu) {
                    *s += (x - m) * (x - m);
                }
            }
        }
        let sigma = sq.iter().map(|s| (s / count as f64).sqrt()).collect();
        Self::new(mode, mu, sigma, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.len() != self.sigma.len() {
            return Err(Error::shape(format!("sigma of length {}", self.mu.len()), self.sigma.len()));
        }
        if self.mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("baseline mu".into()));
        }
        if self.sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::invalid("baseline sigma must be finite and >= 0"));
        }
        Ok(())
    }

    /// The value placed at `(t, d)` when that cell is masked.
    pub fn value_at(&self, t: usize, d: usize) -> f64 {
        match self.mode {
            MaskingMode::Mean => self.mu[d],
            MaskingMode::Zero => 0.0,
            MaskingMode::Noise => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(((t as u64) << 32) | d as u64);
                let z: f64 = StandardNormal.sample(&mut rng);
                self.mu[d] + self.sigma[d] * z
            }
        }
    }

    /// The fully masked `T x D` window.
    pub fn fill(&self, t_len: usize, d_len: usize) -> Result<Window> {
        if self.mu.len() != d_len {
            return Err(Error::shape(format!("baseline for D={d_len}"), format!("D={}", self.mu.len())));
        }
        let data = (0..t_len)
            .flat_map(|t| (0..d_len).map(move |d| (t, d)))
            .map(|(t, d)| self.value_at(t, d))
            .collect();
        Window::new(t_len, d_len, data)
    }
}

/// Pre-resolved masking of one window against one player set.
struct Masker<'a> {
    original: &'a Window,
    fill: Window,
    players: &'a PlayerSet,
}

impl<'a> Masker<'a> {
    fn new(original: &'a Window, players: &'a PlayerSet, baseline: &MaskingBaseline) -> Result<Self> {
        if original.t_len() != players.t_len() || original.d_len() != players.d_len() {
            return Err(Error::shape(
                format!("{}x{} window", players.t_len(), players.d_len()),
                format!("{}x{}", original.t_len(), original.d_len()),
            ));
        }
        baseline.validate()?;
        let fill = baseline.fill(original.t_len(), original.d_len())?;
        Ok(Self { original, fill, players })
    }

    fn restore(&self, target: &mut Window, p: usize) {
        let d_len = self.original.d_len();
        let src = self.original.as_slice();
        let dst = target.as_mut_slice();
        for (t, d) in self.players.player(p).cells() {
            dst[t * d_len + d] = src[t * d_len + d];
        }
    }

    fn apply(&self, coalition: &Coalition) -> Result<Window> {
        if coalition.len() != self.players.len() {
            return Err(Error::shape(format!("coalition of {} players", self.players.len()), coalition.len()));
        }
        let mut out = self.fill.clone();
        for (p, _) in coalition.bits().iter().enumerate().filter(|(_, &b)| b) {
            self.restore(&mut out, p);
        }
        Ok(out)
    }
}

/// Keeps cells owned by coalition members and replaces the rest with the
/// baseline.
pub fn mask(
    window: &Window,
    coalition: &Coalition,
    players: &PlayerSet,
    baseline: &MaskingBaseline,
) -> Result<Window> {
    Masker::new(window, players, baseline)?.apply(coalition)
}

fn predict_checked<P: Predictor + ?Sized>(predictor: &P, windows: &[Window]) -> Result<Vec<f64>> {
    let out = predictor.predict(windows)?;
    if out.len() != windows.len() {
        return Err(Error::Predictor(format!(
            "predictor returned {} outputs for {} windows",
            out.len(),
            windows.len()
        )));
    }
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::Predictor(format!("predictor output {i} is not finite")));
    }
    Ok(out)
}

/// `f(mask(S ∪ {p})) − f(mask(S))`.
pub fn marginal_contribution<P: Predictor + ?Sized>(
    predictor: &P,
    window: &Window,
    player: usize,
    preceding: &Coalition,
    players: &PlayerSet,
    baseline: &MaskingBaseline,
) -> Result<f64> {
    if player >= players.len() {
        return Err(Error::invalid(format!("player {player} outside 0..{}", players.len())));
    }
    if preceding.len() != players.len() {
        return Err(Error::shape(format!("coalition of {} players", players.len()), preceding.len()));
    }
    if preceding.contains(player) {
        return Err(Error::invalid(format!("player {player} already in the preceding coalition")));
    }
    let masker = Masker::new(window, players, baseline)?;
    let without = masker.apply(preceding)?;
    let mut with = without.clone();
    masker.restore(&mut with, player);
    let v = predict_checked(predictor, &[with, without])?;
    Ok(v[0] - v[1])
}

/// Shapley values with the value of the full and empty coalitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionResult {
    pub phi: Vec<f64>,
    /// Permutations averaged; 0 for exact enumeration.
    #[serde(rename = "M")]
    pub m_used: usize,
    pub f_full: f64,
    pub f_empty: f64,
    pub baseline: MaskingBaseline,
    /// Digest of the player set.
    pub players_ref: String,
    pub seed: u64,
    pub forward_calls: u64,
}

impl AttributionResult {
    /// `|Σφ − (f_full − f_empty)|`.
    pub fn efficiency_gap(&self) -> f64 {
        (self.phi.iter().sum::<f64>() - (self.f_full - self.f_empty)).abs()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn batch_len(cells: usize) -> usize {
    (MAX_BATCH_CELLS / cells.max(1)).max(1)
}

/// Values along one permutation: `v[0] = f(∅)`, `v[i+1] = f(first i+1 players)`.
fn walk<P: Predictor + ?Sized>(predictor: &P, masker: &Masker<'_>, order: &[usize]) -> Result<Vec<f64>> {
    let chunk = batch_len(masker.fill.as_slice().len());
    let mut values = Vec::with_capacity(order.len() + 1);
    let mut current = masker.fill.clone();
    let mut pending = Vec::with_capacity(chunk.min(order.len() + 1));
    pending.push(current.clone());
    for &p in order {
        if pending.len() == chunk {
            values.extend(predict_checked(predictor, &pending)?);
            pending.clear();
        }
        masker.restore(&mut current, p);
        pending.push(current.clone());
    }
    values.extend(predict_checked(predictor, &pending)?);
    Ok(values)
}

fn permutation(n: usize, seed: u64, index: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Averages marginal contributions over `m` seeded permutations, using
/// `|P|+1` predictor calls per permutation.
///
/// Permutation `i` depends only on `(seed, i)`, and the average is reduced in
/// index order, so results do not depend on thread scheduling.
pub fn shapley_permutation<P: Predictor + ?Sized>(
    predictor: &P,
    window: &Window,
    players: &PlayerSet,
    m: usize,
    baseline: &MaskingBaseline,
    seed: u64,
) -> Result<AttributionResult> {
    if m < 1 {
        return Err(Error::invalid("permutation count M must be >= 1"));
    }
    let masker = Masker::new(window, players, baseline)?;
    let n = players.len();
    let run = |i: usize| -> Result<(Vec<usize>, Vec<f64>)> {
        let order = permutation(n, seed, i);
        let values = walk(predictor, &masker, &order)?;
        Ok((order, values))
    };
    let walks: Vec<(Vec<usize>, Vec<f64>)> = if predictor.concurrency_safe() {
        (0..m).into_par_iter().map(run).collect::<Result<_>>()?
    } else {
        (0..m).map(run).collect::<Result<_>>()?
    };

    let mut phi = vec![0.0; n];
    for (order, values) in &walks {
        for (i, &p) in order.iter().enumerate() {
            phi[p] += values[i + 1] - values[i];
        }
    }
    for v in &mut phi {
        *v /= m as f64;
    }
    let first = &walks[0].1;
    Ok(AttributionResult {
        phi,
        m_used: m,
        f_full: first[n],
        f_empty: first[0],
        baseline: baseline.clone(),
        players_ref: players.digest(),
        seed,
        forward_calls: (m * (n + 1)) as u64,
    })
}

/// `s!(n−s−1)!/n!` for `s = 0..n`.
fn shapley_weights(n: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(n);
    // 1/(n·C(n−1, s)), with C built incrementally.
    let mut binom = 1.0f64;
    for s in 0..n {
        w.push(1.0 / (n as f64 * binom));
        binom = binom * (n - 1 - s) as f64 / (s + 1) as f64;
    }
    w
}

/// Exact Shapley values from all `2^|P|` coalitions.
pub fn shapley_exact<P: Predictor + ?Sized>(
    predictor: &P,
    window: &Window,
    players: &PlayerSet,
    baseline: &MaskingBaseline,
) -> Result<AttributionResult> {
    let n = players.len();
    if n > MAX_EXACT_PLAYERS {
        return Err(Error::TooManyPlayers { players: n, max: MAX_EXACT_PLAYERS });
    }
    let masker = Masker::new(window, players, baseline)?;
    let total = 1usize << n;
    let chunk = batch_len(masker.fill.as_slice().len());
    let evaluate = |range: std::ops::Range<usize>| -> Result<Vec<f64>> {
        let batch: Vec<Window> = range
            .map(|mask_bits| {
                let mut w = masker.fill.clone();
                for p in (0..n).filter(|p| mask_bits >> p & 1 == 1) {
                    masker.restore(&mut w, p);
                }
                w
            })
            .collect();
        predict_checked(predictor, &batch)
    };
    let ranges: Vec<_> = (0..total).step_by(chunk).map(|s| s..(s + chunk).min(total)).collect();
    let parts: Vec<Vec<f64>> = if predictor.concurrency_safe() {
        ranges.into_par_iter().map(evaluate).collect::<Result<_>>()?
    } else {
        ranges.into_iter().map(evaluate).collect::<Result<_>>()?
    };
    let values: Vec<f64> = parts.into_iter().flatten().collect();

    let weights = shapley_weights(n);
    let phi = (0..n)
        .map(|p| {
            let bit = 1usize << p;
            (0..total)
                .filter(|s| s & bit == 0)
                .map(|s| weights[s.count_ones() as usize] * (values[s | bit] - values[s]))
                .sum()
        })
        .collect();
    Ok(AttributionResult {
        phi,
        m_used: 0,
        f_full: values[total - 1],
        f_empty: values[0],
        baseline: baseline.clone(),
        players_ref: players.digest(),
        seed: 0,
        forward_calls: total as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::players::{baseline_players, BaselineParams, PlayerScheme};
    use crate::predictors::{FnPredictor, InteractionTerm, PlayerAdditive, PlayerInteraction};

    fn timesteps(t_len: usize, d_len: usize) -> PlayerSet {
        baseline_players(PlayerScheme::Timestep, t_len, d_len, BaselineParams::default()).unwrap()
    }

    fn mean_baseline(mu: Vec<f64>) -> MaskingBaseline {
        let d = mu.len();
        MaskingBaseline::new(MaskingMode::Mean, mu, vec![1.0; d], 0).unwrap()
    }

    fn ones(t_len: usize, d_len: usize) -> Window {
        Window::filled(t_len, d_len, 1.0).unwrap()
    }

    #[test]
    fn shapley_weights_match_factorials() {
        fn fact(k: usize) -> f64 {
            (1..=k).map(|i| i as f64).product()
        }
        for n in 1..12 {
            for (s, w) in shapley_weights(n).iter().enumerate() {
                let exact = fact(s) * fact(n - s - 1) / fact(n);
                assert!((w - exact).abs() <= 1e-15 * exact.max(1.0), "n={n} s={s}");
            }
        }
    }

    #[test]
    fn mask_identity_and_empty() {
        let players = timesteps(3, 2);
        let w = Window::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = mean_baseline(vec![-1.0, 9.0]);
        assert_eq!(mask(&w, &Coalition::full(3), &players, &b).unwrap(), w);
        let empty = mask(&w, &Coalition::empty(3), &players, &b).unwrap();
        for t in 0..3 {
            assert_eq!(empty.row(t), &[-1.0, 9.0]);
        }
        assert!(mask(&w, &Coalition::empty(2), &players, &b).is_err());
    }

    #[test]
    fn noise_mask_is_reproducible() {
        let players = timesteps(4, 3);
        let b = MaskingBaseline::new(MaskingMode::Noise, vec![0.0; 3], vec![2.0; 3], 11).unwrap();
        let w = ones(4, 3);
        let c = Coalition::from_members(4, &[1]).unwrap();
        let a = mask(&w, &c, &players, &b).unwrap();
        assert_eq!(a, mask(&w, &c, &players, &b).unwrap());
        assert_eq!(a.row(1), &[1.0, 1.0, 1.0]);
        assert_ne!(a.get(0, 0), a.get(0, 1));
        // Draws depend on (t, d) only, not on the grid size.
        let bigger = b.fill(6, 3).unwrap();
        assert_eq!(bigger.get(3, 2), a.get(3, 2));
    }

    #[test]
    fn background_statistics() {
        let bg = vec![
            Window::new(2, 2, vec![0.0, 1.0, 2.0, 1.0]).unwrap(),
            Window::new(2, 2, vec![4.0, 1.0, 2.0, 1.0]).unwrap(),
        ];
        let b = MaskingBaseline::from_background(&bg, MaskingMode::Mean, 0).unwrap();
        assert_eq!(b.mu, vec![2.0, 1.0]);
        assert_eq!(b.sigma, vec![2.0f64.sqrt(), 0.0]);
        assert!(MaskingBaseline::from_background(&[], MaskingMode::Mean, 0).is_err());
    }

    fn and_game() -> (PlayerInteraction, PlayerSet, Window, MaskingBaseline) {
        let players = timesteps(2, 1);
        let f = PlayerInteraction::new(
            players.clone(),
            vec![InteractionTerm { p: 0, q: 1, payoff: 1.0 }],
            vec![0.0],
        )
        .unwrap();
        (f, players, ones(2, 1), mean_baseline(vec![0.0]))
    }

    #[test]
    fn marginal_examples() {
        let players = timesteps(3, 1);
        let f = PlayerAdditive::new(players.clone(), vec![2.0, -1.0, 0.0], vec![0.0]).unwrap();
        let w = ones(3, 1);
        let b = mean_baseline(vec![0.0]);
        for bits in 0..8usize {
            let pre = Coalition::new((0..3).map(|i| bits >> i & 1 == 1).collect());
            for (p, wp) in [2.0, -1.0, 0.0].iter().enumerate() {
                if !pre.contains(p) {
                    let m = marginal_contribution(&f, &w, p, &pre, &players, &b).unwrap();
                    assert_eq!(m, *wp);
                }
            }
        }
        let (f, players, w, b) = and_game();
        let other = Coalition::from_members(2, &[1]).unwrap();
        assert_eq!(marginal_contribution(&f, &w, 0, &other, &players, &b).unwrap(), 1.0);
        assert_eq!(marginal_contribution(&f, &w, 0, &Coalition::empty(2), &players, &b).unwrap(), 0.0);
        assert!(marginal_contribution(&f, &w, 1, &other, &players, &b).is_err());
    }

    #[test]
    fn additive_weights_recovered() {
        let players = timesteps(3, 2);
        let f = PlayerAdditive::new(players.clone(), vec![2.0, -1.0, 0.0], vec![0.5, -0.5]).unwrap();
        let w = Window::new(3, 2, vec![1.5, 0.5, 1.5, 0.5, 1.5, 0.5]).unwrap();
        let b = mean_baseline(vec![0.5, -0.5]);
        for (m, seed) in [(1, 0), (7, 3), (50, 99)] {
            let r = shapley_permutation(&f, &w, &players, m, &b, seed).unwrap();
            assert_eq!(r.phi, vec![2.0, -1.0, 0.0]);
            assert_eq!(r.forward_calls, (m * 4) as u64);
        }
        let r = shapley_exact(&f, &w, &players, &b).unwrap();
        assert_eq!(r.phi, vec![2.0, -1.0, 0.0]);
        assert!(shapley_permutation(&f, &w, &players, 0, &b, 0).is_err());
    }

    #[test]
    fn and_game_values() {
        let (f, players, w, b) = and_game();
        let r = shapley_exact(&f, &w, &players, &b).unwrap();
        assert_eq!(r.phi, vec![0.5, 0.5]);
        let r = shapley_permutation(&f, &w, &players, 1, &b, 5).unwrap();
        assert_eq!(r.phi.iter().sum::<f64>(), 1.0);
        assert_eq!((r.f_full, r.f_empty), (1.0, 0.0));
    }

    #[test]
    fn and_game_sampling_spread() {
        // phi_0 ~ Binomial(200, 1/2)/200: sd ≈ 0.035, so 0.07 is a 2-sigma band.
        let (f, players, w, b) = and_game();
        let within = (0..100u64)
            .filter(|&seed| {
                let r = shapley_permutation(&f, &w, &players, 200, &b, seed).unwrap();
                (r.phi[0] - 0.5).abs() <= 0.07
            })
            .count();
        assert!(within >= 95, "{within}/100 seeds within 0.07");
    }

    #[test]
    fn dummy_player_gets_zero() {
        let players = timesteps(4, 1);
        let f = FnPredictor(|w: &Window| w.get(0, 0) * w.get(1, 0) + 3.0 * w.get(3, 0).sin());
        let w = Window::new(4, 1, vec![0.3, -1.2, 7.0, 2.0]).unwrap();
        let b = mean_baseline(vec![0.1]);
        assert_eq!(shapley_exact(&f, &w, &players, &b).unwrap().phi[2], 0.0);
        assert_eq!(shapley_permutation(&f, &w, &players, 13, &b, 2).unwrap().phi[2], 0.0);
    }

    #[test]
    fn exact_rejects_large_sets() {
        let players = timesteps(21, 1);
        let f = FnPredictor(|_: &Window| 0.0);
        let err = shapley_exact(&f, &ones(21, 1), &players, &mean_baseline(vec![0.0])).unwrap_err();
        assert!(matches!(err, Error::TooManyPlayers { players: 21, max: 20 }));
    }

    #[test]
    fn serial_and_parallel_agree() {
        struct Serial<F>(F);
        impl<F: Predictor> Predictor for Serial<F> {
            fn predict(&self, w: &[Window]) -> Result<Vec<f64>> {
                self.0.predict(w)
            }
            fn concurrency_safe(&self) -> bool {
                false
            }
        }
        let players = timesteps(6, 2);
        let f = FnPredictor(|w: &Window| w.as_slice().iter().enumerate().map(|(i, x)| (i as f64 * x).cos()).sum());
        let w = Window::new(6, 2, (0..12).map(|i| i as f64 * 0.37).collect()).unwrap();
        let b = mean_baseline(vec![0.2, -0.4]);
        let par = shapley_permutation(&f, &w, &players, 40, &b, 8).unwrap();
        let ser = shapley_permutation(&Serial(f), &w, &players, 40, &b, 8).unwrap();
        assert_eq!(par, ser);
        assert!(par.efficiency_gap() <= 1e-9);
    }

    #[test]
    fn result_json_round_trip() {
        let (f, players, w, b) = and_game();
        let r = shapley_permutation(&f, &w, &players, 3, &b, 1).unwrap();
        let json = r.to_json().unwrap();
        assert!(json.contains("\"M\": 3"));
        assert_eq!(AttributionResult::from_json(&json).unwrap(), r);
    }
}
