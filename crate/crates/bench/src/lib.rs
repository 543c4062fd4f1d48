//! Shared inputs for the benchmarks.

use groupseg::synth::{mean_shift, planted_blocks, player_fixture, MeanShiftParams, PlantedBlocksParams, PlayerFixture, PlayerFixtureParams};
use groupseg::{Sample1D, Window};

/// `d` pooled background variables of `n` samples each, block-correlated.
pub fn hsic_samples(n: usize, d: usize, seed: u64) -> Vec<Sample1D> {
    let params = PlantedBlocksParams { t_len: n, n_windows: 1, d, ..PlantedBlocksParams::new(seed) };
    let w = &planted_blocks(&params).expect("valid params").windows[0];
    (0..d).map(|j| Sample1D::new(w.column(j)).expect("finite")).collect()
}

/// A univariate series with a single mean shift halfway.
pub fn shifted_series(t_len: usize, seed: u64) -> Window {
    let params = MeanShiftParams { t_len, shift_at: t_len / 2, ..MeanShiftParams::new(seed) };
    mean_shift(&params).expect("valid params")
}

pub fn fixture(seed: u64) -> PlayerFixture {
    player_fixture(&PlayerFixtureParams::new(seed)).expect("valid params")
}
