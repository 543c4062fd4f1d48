use serde::{Deserialize, Serialize};

use super::Predictor;
use crate::error::{Error, Result};
use crate::players::PlayerSet;
use crate::window::Window;

fn check_shape(w: &Window, t_len: usize, d_len: usize) -> Result<()> {
    if w.t_len() != t_len || w.d_len() != d_len {
        return Err(Error::shape(
            format!("{t_len}x{d_len} window"),
            format!("{}x{}", w.t_len(), w.d_len()),
        ));
    }
    Ok(())
}

/// `f(X) = Σ_{t,d} W[t][d] · X[t][d]`.
#[derive(Clone, Debug)]
pub struct LinearPredictor {
    t_len: usize,
    d_len: usize,
    weights: Vec<f64>,
}

impl LinearPredictor {
    pub fn new(t_len: usize, d_len: usize, weights: Vec<f64>) -> Result<Self> {
        let w = Window::new(t_len, d_len, weights)?;
        Ok(Self { t_len, d_len, weights: w.as_slice().to_vec() })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let w = Window::from_rows(rows)?;
        Self::new(w.t_len(), w.d_len(), w.as_slice().to_vec())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn eval(&self, w: &Window) -> Result<f64> {
        check_shape(w, self.t_len, self.d_len)?;
        Ok(self.weights.iter().zip(w.as_slice()).map(|(a, x)| a * x).sum())
    }
}

impl Predictor for LinearPredictor {
    fn predict(&self, windows: &[Window]) -> Result<Vec<f64>> {
        windows.iter().map(|w| self.eval(w)).collect()
    }
}

/// Per-player mean deviation from a reference, `g_p(X) = mean_{(t,d) ∈ p} (X[t][d] − μ_d)`.
/// Mean-replacement masking of player `p` makes `g_p` exactly zero.
#[derive(Clone, Debug)]
struct PlayerMeans {
    players: PlayerSet,
    mu: Vec<f64>,
}

impl PlayerMeans {
    fn new(players: PlayerSet, mu: Vec<f64>) -> Result<Self> {
        if mu.len() != players.d_len() {
            return Err(Error::shape(format!("mu of length {}", players.d_len()), mu.len()));
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("mu".into()));
        }
        Ok(Self { players, mu })
    }

    fn deviations(&self, w: &Window) -> Result<Vec<f64>> {
        check_shape(w, self.players.t_len(), self.players.d_len())?;
        Ok(self
            .players
            .players()
            .iter()
            .map(|p| {
                let sum: f64 = p.cells().map(|(t, d)| w.get(t, d) - self.mu[d]).sum();
                sum / p.cell_count() as f64
            })
            .collect())
    }
}

/// `f(X) = Σ_p w_p · g_p(X)`. Exact Shapley values under mean masking are
/// `w_p · g_p(X)`.
#[derive(Clone, Debug)]
pub struct PlayerAdditive {
    means: PlayerMeans,
    weights: Vec<f64>,
}

impl PlayerAdditive {
    pub fn new(players: PlayerSet, weights: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        if weights.len() != players.len() {
            return Err(Error::shape(format!("{} weights", players.len()), weights.len()));
        }
        Ok(Self { means: PlayerMeans::new(players, mu)?, weights })
    }

    /// `g_p(X)` for every player.
    pub fn deviations(&self, w: &Window) -> Result<Vec<f64>> {
        self.means.deviations(w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl Predictor for PlayerAdditive {
    fn predict(&self, windows: &[Window]) -> Result<Vec<f64>> {
        windows
            .iter()
            .map(|w| {
                let g = self.means.deviations(w)?;
                Ok(self.weights.iter().zip(&g).map(|(a, b)| a * b).sum())
            })
            .collect()
    }
}

/// One `c · g_p · g_q` term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionTerm {
    pub p: usize,
    pub q: usize,
    pub payoff: f64,
}

/// `f(X) = Σ c_pq · g_p(X) · g_q(X)`.
#[derive(Clone, Debug)]
pub struct PlayerInteraction {
    means: PlayerMeans,
    pairs: Vec<InteractionTerm>,
}

impl PlayerInteraction {
    pub fn new(players: PlayerSet, pairs: Vec<InteractionTerm>, mu: Vec<f64>) -> Result<Self> {
        let n = players.len();
        if let Some(t) = pairs.iter().find(|t| t.p >= n || t.q >= n) {
            return Err(Error::invalid(format!(
                "interaction ({}, {}) refers to a player outside 0..{n}",
                t.p, t.q
            )));
        }
        Ok(Self { means: PlayerMeans::new(players, mu)?, pairs })
    }
}

impl Predictor for PlayerInteraction {
    fn predict(&self, windows: &[Window]) -> Result<Vec<f64>> {
        windows
            .iter()
            .map(|w| {
                let g = self.means.deviations(w)?;
                Ok(self.pairs.iter().map(|t| t.payoff * g[t.p] * g[t.q]).sum())
            })
            .collect()
    }
}
