//! The black-box predictor interface `f: R^{T x D} -> R`.

mod builtin;
mod external;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use builtin::{InteractionTerm, LinearPredictor, PlayerAdditive, PlayerInteraction};
pub use external::{ExternalPredictor, DEFAULT_TIMEOUT_SECS};

use crate::error::Result;
use crate::players::PlayerSet;
use crate::window::Window;

/// A scalar-valued model over windows, evaluated in batches.
pub trait Predictor: Send + Sync {
    /// One output per window, in order.
    fn predict(&self, windows: &[Window]) -> Result<Vec<f64>>;

    /// Whether `predict` may be called from several threads at once.
    fn concurrency_safe(&self) -> bool {
        true
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn predict(&self, windows: &[Window]) -> Result<Vec<f64>> {
        (**self).predict(windows)
    }
    fn concurrency_safe(&self) -> bool {
        (**self).concurrency_safe()
    }
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn predict(&self, windows: &[Window]) -> Result<Vec<f64>> {
        (**self).predict(windows)
    }
    fn concurrency_safe(&self) -> bool {
        (**self).concurrency_safe()
    }
}

impl<P: Predictor + ?Sized> Predictor for Arc<P> {
    fn predict(&self, windows: &[Window]) -> Result<Vec<f64>> {
        (**self).predict(windows)
    }
    fn concurrency_safe(&self) -> bool {
        (**self).concurrency_safe()
    }
}

/// Wraps a per-window closure.
pub struct FnPredictor<F>(pub F);

impl<F> Predictor for FnPredictor<F>
where
    F: Fn(&Window) -> f64 + Send + Sync,
{
    fn predict(&self, windows: &[Window]) -> Result<Vec<f64>> {
        Ok(windows.iter().map(&self.0).collect())
    }
}

/// Counts forward evaluations (windows) and batches passed to `inner`.
pub struct CallCounter<P> {
    inner: P,
    windows: AtomicUsize,
    batches: AtomicUsize,
}

impl<P: Predictor> CallCounter<P> {
    pub fn new(inner: P) -> Self {
        Self { inner, windows: AtomicUsize::new(0), batches: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.windows.load(Ordering::SeqCst)
    }

    pub fn batches(&self) -> usize {
        self.batches.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.windows.store(0, Ordering::SeqCst);
        self.batches.store(0, Ordering::SeqCst);
    }
}

impl<P: Predictor> Predictor for CallCounter<P> {
    fn predict(&self, windows: &[Window]) -> Result<Vec<f64>> {
        self.windows.fetch_add(windows.len(), Ordering::SeqCst);
        self.batches.fetch_add(1, Ordering::SeqCst);
        self.inner.predict(windows)
    }

    fn concurrency_safe(&self) -> bool {
        self.inner.concurrency_safe()
    }
}

/// Serializable predictor description, as found in run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PredictorSpec {
    /// `Σ W[t][d] · X[t][d]`; `weights` is `T` rows of `D` values.
    Linear { weights: Vec<Vec<f64>> },
    /// `Σ_p w_p · g_p(X)`, `g_p` the mean of `X − μ` over player `p`'s cells.
    PlayerAdditive { weights: Vec<f64>, players: PlayerSet, mu: Vec<f64> },
    /// `Σ c_pq · g_p(X) · g_q(X)` over the listed pairs.
    PlayerInteraction {
        pairs: Vec<InteractionTerm>,
        players: PlayerSet,
        mu: Vec<f64>,
    },
    /// A child process speaking the line-delimited JSON protocol.
    External {
        command: Vec<String>,
        #[serde(default)]
        env: BTreeMap<String, String>,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        #[serde(default = "default_workers")]
        workers: usize,
    },
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_SECS
}

fn default_workers() -> usize {
    1
}

impl PredictorSpec {
    pub fn build(&self) -> Result<Box<dyn Predictor>> {
        Ok(match self {
            PredictorSpec::Linear { weights } => Box::new(LinearPredictor::from_rows(weights)?),
            PredictorSpec::PlayerAdditive { weights, players, mu } => {
                Box::new(PlayerAdditive::new(players.clone(), weights.clone(), mu.clone())?)
            }
            PredictorSpec::PlayerInteraction { pairs, players, mu } => {
                Box::new(PlayerInteraction::new(players.clone(), pairs.clone(), mu.clone())?)
            }
            PredictorSpec::External { command, env, timeout_secs, workers } => {
                Box::new(ExternalPredictor::spawn(
                    command.clone(),
                    env.clone(),
                    std::time::Duration::from_secs_f64(*timeout_secs),
                    *workers,
                )?)
            }
        })
    }

    /// Expected `(T, D)` for the built-in kinds.
    pub fn shape(&self) -> Option<(usize, usize)> {
        match self {
            PredictorSpec::Linear { weights } => {
                Some((weights.len(), weights.first().map_or(0, Vec::len)))
            }
            PredictorSpec::PlayerAdditive { players, .. }
            | PredictorSpec::PlayerInteraction { players, .. } => {
                Some((players.t_len(), players.d_len()))
            }
            PredictorSpec::External { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::players::{baseline_players, BaselineParams, PlayerScheme};

    #[test]
    fn spec_json_round_trip() {
        let players = baseline_players(PlayerScheme::Timestep, 2, 2, BaselineParams::default()).unwrap();
        let spec = PredictorSpec::PlayerAdditive { weights: vec![1.0, -2.0], players, mu: vec![0.5, 0.0] };
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"kind\":\"player_additive\""));
        let back: PredictorSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        assert_eq!(back.shape(), Some((2, 2)));

        let ext: PredictorSpec = serde_json::from_str(r#"{"kind":"external","command":["x"]}"#).unwrap();
        assert_eq!(
            ext,
            PredictorSpec::External {
                command: vec!["x".into()],
                env: BTreeMap::new(),
                timeout_secs: 30.0,
                workers: 1
            }
        );
    }

    #[test]
    fn counter_counts_windows() {
        let p = CallCounter::new(FnPredictor(|w: &Window| w.get(0, 0)));
        let w = Window::filled(1, 1, 3.0).unwrap();
        assert_eq!(p.predict(&[w.clone(), w]).unwrap(), vec![3.0, 3.0]);
        assert_eq!((p.calls(), p.batches()), (2, 1));
    }
}
