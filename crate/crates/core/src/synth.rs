//! Seeded synthetic data with known structure.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::{default_variable_names, Grouping, GroupingMethod};
use crate::players::{build_players, PlayerSet};
use crate::predictors::PredictorSpec;
use crate::segmentation::{Segment, Segmentation};
use crate::window::Window;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedBlocksParams {
    #[serde(default = "default_planted_t")]
    pub t_len: usize,
    #[serde(default = "default_planted_windows")]
    pub n_windows: usize,
    #[serde(default = "default_planted_d")]
    pub d: usize,
    #[serde(default = "default_latents")]
    pub n_latents: usize,
    /// Standard deviation of the per-variable noise added to its latent.
    #[serde(default = "default_planted_noise")]
    pub noise: f64,
    pub seed: u64,
}

fn default_planted_t() -> usize {
    100
}
fn default_planted_windows() -> usize {
    10
}
fn default_planted_d() -> usize {
    6
}
fn default_latents() -> usize {
    2
}
fn default_planted_noise() -> f64 {
    0.5
}

impl PlantedBlocksParams {
    pub fn new(seed: u64) -> Self {
        Self {
            t_len: default_planted_t(),
            n_windows: default_planted_windows(),
            d: default_planted_d(),
            n_latents: default_latents(),
            noise: default_planted_noise(),
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedBlocks {
    pub windows: Vec<Window>,
    /// Contiguous variable blocks, one per latent.
    pub blocks: Vec<Vec<usize>>,
}

impl PlantedBlocks {
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![0; self.blocks.iter().map(Vec::len).sum()];
        for (k, block) in self.blocks.iter().enumerate() {
            for &v in block {
                labels[v] = k;
            }
        }
        labels
    }

    pub fn grouping(&self) -> Result<Grouping> {
        Grouping::new(GroupingMethod::None, self.blocks.clone(), default_variable_names(self.labels().len()), 0)
    }
}

/// `x_d = u_{block(d)} + noise·ε_d` with independent standard normal
/// latents `u` per time step.
pub fn planted_blocks(params: &PlantedBlocksParams) -> Result<PlantedBlocks> {
    let PlantedBlocksParams { t_len, n_windows, d, n_latents, noise, seed } = *params;
    if n_latents == 0 || n_latents > d || t_len == 0 || n_windows == 0 {
        return Err(Error::invalid("planted blocks need 1 <= n_latents <= d and non-empty windows"));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::invalid("planted blocks noise must be finite and >= 0"));
    }
    let bounds: Vec<usize> = (0..=n_latents).map(|k| k * d / n_latents).collect();
    let blocks: Vec<Vec<usize>> = bounds.windows(2).map(|w| (w[0]..w[1]).collect()).collect();
    let mut block_of = vec![0; d];
    for (k, b) in blocks.iter().enumerate() {
        for &v in b {
            block_of[v] = k;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let windows = (0..n_windows)
        .map(|_| {
            let mut data = Vec::with_capacity(t_len * d);
            for _ in 0..t_len {
                let latents: Vec<f64> = (0..n_latents).map(|_| normal(&mut rng)).collect();
                for &k in &block_of {
                    data.push(latents[k] + noise * normal(&mut rng));
                }
            }
            Window::new(t_len, d, data)
        })
        .collect::<Result<_>>()?;
    Ok(PlantedBlocks { windows, blocks })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanShiftParams {
    #[serde(default = "default_shift_t")]
    pub t_len: usize,
    #[serde(default = "default_shift_d")]
    pub d: usize,
    /// First shifted row, zero-based.
    #[serde(default = "default_shift_at")]
    pub shift_at: usize,
    /// Shift size in units of `sigma`.
    #[serde(default = "default_magnitude")]
    pub magnitude: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub seed: u64,
}

fn default_shift_t() -> usize {
    128
}
fn default_shift_d() -> usize {
    1
}
fn default_shift_at() -> usize {
    64
}
fn default_magnitude() -> f64 {
    3.0
}
fn default_sigma() -> f64 {
    1.0
}

impl MeanShiftParams {
    pub fn new(seed: u64) -> Self {
        Self {
            t_len: default_shift_t(),
            d: default_shift_d(),
            shift_at: default_shift_at(),
            magnitude: default_magnitude(),
            sigma: default_sigma(),
            seed,
        }
    }
}

/// Gaussian noise with every variable shifted by `magnitude·sigma` from
/// row `shift_at` on. `magnitude = 0` gives i.i.d. noise.
pub fn mean_shift(params: &MeanShiftParams) -> Result<Window> {
    let MeanShiftParams { t_len, d, shift_at, magnitude, sigma, seed } = *params;
    if t_len == 0 || d == 0 || shift_at > t_len {
        return Err(Error::invalid("mean shift needs T, D >= 1 and shift_at <= T"));
    }
    if !(sigma.is_finite() && sigma > 0.0 && magnitude.is_finite()) {
        return Err(Error::invalid("mean shift needs sigma > 0 and a finite magnitude"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(t_len * d);
    for t in 0..t_len {
        let offset = if t >= shift_at { magnitude * sigma } else { 0.0 };
        for _ in 0..d {
            data.push(offset + sigma * normal(&mut rng));
        }
    }
    Window::new(t_len, d, data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerFixtureParams {
    #[serde(default = "default_targets")]
    pub n_targets: usize,
    #[serde(default = "default_background")]
    pub n_background: usize,
    /// Spread of the zero-mean within-player perturbation of targets.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    pub seed: u64,
}

fn default_targets() -> usize {
    1
}
fn default_background() -> usize {
    16
}
fn default_jitter() -> f64 {
    0.25
}

impl PlayerFixtureParams {
    pub fn new(seed: u64) -> Self {
        Self { n_targets: default_targets(), n_background: default_background(), jitter: default_jitter(), seed }
    }
}

/// Windows with a known player structure and an additive predictor whose
/// exact Shapley values under mean masking equal its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct PlayerFixture {
    pub grouping: Grouping,
    pub segmentations: Vec<Segmentation>,
    pub players: PlayerSet,
    pub weights: Vec<f64>,
    pub mu: Vec<f64>,
    /// Each player's cells average exactly one unit above `mu`.
    pub targets: Vec<Window>,
    /// Per-variable mean equal to `mu`.
    pub background: Vec<Window>,
}

pub const FIXTURE_T: usize = 32;
pub const FIXTURE_D: usize = 4;
pub const FIXTURE_WEIGHTS: [f64; 4] = [3.0, -1.0, 2.0, 0.5];
pub const FIXTURE_MU: [f64; 4] = [0.5, -1.0, 2.0, 0.0];

impl PlayerFixture {
    pub fn spec(&self) -> PredictorSpec {
        PredictorSpec::PlayerAdditive {
            weights: self.weights.clone(),
            players: self.players.clone(),
            mu: self.mu.clone(),
        }
    }
}

/// Groups `{0,1}` and `{2,3}` over `T = 32`, split at rows 8 and 16
/// respectively, giving four players.
pub fn player_fixture(params: &PlayerFixtureParams) -> Result<PlayerFixture> {
    let PlayerFixtureParams { n_targets, n_background, jitter, seed } = *params;
    if n_targets == 0 || n_background == 0 {
        return Err(Error::invalid("player fixture needs at least one target and one background window"));
    }
    if !(jitter.is_finite() && jitter >= 0.0) {
        return Err(Error::invalid("player fixture jitter must be finite and >= 0"));
    }
    let (t_len, d_len) = (FIXTURE_T, FIXTURE_D);
    let grouping = Grouping::new(
        GroupingMethod::None,
        vec![vec![0, 1], vec![2, 3]],
        default_variable_names(d_len),
        seed,
    )?;
    let segmentation = |k: usize, cut: usize| Segmentation {
        group_index: k,
        segments: vec![Segment { start: 0, end: cut }, Segment { start: cut, end: t_len }],
        under_length: false,
        l_min: 8,
        alpha: 0.05,
        seed,
    };
    let segmentations = vec![segmentation(0, 8), segmentation(1, 16)];
    let players = build_players(&grouping, &segmentations, t_len, d_len)?;
    let mu = FIXTURE_MU.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let targets = (0..n_targets)
        .map(|_| {
            let mut data: Vec<f64> = (0..t_len * d_len).map(|i| mu[i % d_len] + 1.0).collect();
            for p in players.players() {
                let cells: Vec<usize> = p.cells().map(|(t, d)| t * d_len + d).collect();
                let noise: Vec<f64> = cells.iter().map(|_| jitter * normal(&mut rng)).collect();
                let centre = noise.iter().sum::<f64>() / noise.len() as f64;
                for (&c, e) in cells.iter().zip(&noise) {
                    data[c] += e - centre;
                }
            }
            Window::new(t_len, d_len, data)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut noise: Vec<Vec<f64>> =
        (0..n_background).map(|_| (0..t_len * d_len).map(|_| normal(&mut rng)).collect()).collect();
    let cells_per_var = (n_background * t_len) as f64;
    for d in 0..d_len {
        let centre = noise.iter().flat_map(|w| w.iter().skip(d).step_by(d_len)).sum::<f64>() / cells_per_var;
        for w in &mut noise {
            for v in w.iter_mut().skip(d).step_by(d_len) {
                *v -= centre;
            }
        }
    }
    let background = noise
        .into_iter()
        .map(|w| {
            let data = w.iter().enumerate().map(|(i, e)| mu[i % d_len] + e).collect();
            Window::new(t_len, d_len, data)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(PlayerFixture {
        grouping,
        segmentations,
        players,
        weights: FIXTURE_WEIGHTS.to_vec(),
        mu,
        targets,
        background,
    })
}
