//! End-to-end explanation of one window: segment each feature group, build
//! players, attribute, and project to cells.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{shapley_exact, shapley_permutation, AttributionResult, MaskingBaseline, MaskingMode};
use crate::error::{Error, Result};
use crate::evaluation::{project_to_cells, ImportanceMap};
use crate::grouping::Grouping;
use crate::players::{baseline_players, build_players, BaselineParams, PlayerScheme, PlayerSet};
use crate::predictors::Predictor;
use crate::segmentation::{segment_group_indexed, Segmentation, SegmentationConfig};
use crate::window::{Points, Window};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    Permutation,
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionConfig {
    /// Sampled permutations.
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(default)]
    pub baseline: MaskingMode,
    pub seed: u64,
    #[serde(default)]
    pub estimator: Estimator,
}

impl AttributionConfig {
    pub fn new(m: usize, seed: u64) -> Self {
        Self { m, baseline: MaskingMode::Mean, seed, estimator: Estimator::Permutation }
    }

    pub fn validate(&self) -> Result<()> {
        if self.estimator == Estimator::Permutation && self.m == 0 {
            return Err(Error::invalid("attribution M must be >= 1"));
        }
        Ok(())
    }

    /// Baseline statistics from the background windows.
    pub fn baseline(&self, background: &[Window]) -> Result<MaskingBaseline> {
        MaskingBaseline::from_background(background, self.baseline, self.seed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerConfig {
    #[serde(default = "default_scheme")]
    pub scheme: PlayerScheme,
    #[serde(default)]
    pub window_len: Option<usize>,
    #[serde(default)]
    pub n_subseq: Option<usize>,
}

fn default_scheme() -> PlayerScheme {
    PlayerScheme::GroupSegment
}

impl PlayerConfig {
    pub fn group_segment() -> Self {
        Self::scheme(PlayerScheme::GroupSegment)
    }

    pub fn scheme(scheme: PlayerScheme) -> Self {
        Self { scheme, window_len: None, n_subseq: None }
    }

    pub fn params(&self) -> BaselineParams {
        BaselineParams { window_len: self.window_len, n_subseq: self.n_subseq }
    }
}

/// Settings shared by every window explained in a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Pipeline {
    pub segmentation: SegmentationConfig,
    pub players: PlayerConfig,
    pub attribution: AttributionConfig,
    /// Used instead of building players when set.
    pub fixed_players: Option<PlayerSet>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Explanation {
    /// Empty unless the scheme is group-segment.
    pub segmentations: Vec<Segmentation>,
    pub players: PlayerSet,
    pub result: AttributionResult,
    pub map: ImportanceMap,
}

/// Segments every group of `window` independently.
pub fn segment_window(
    window: &Window,
    grouping: &Grouping,
    config: &SegmentationConfig,
) -> Result<Vec<Segmentation>> {
    if grouping.n_variables() != window.d_len() {
        return Err(Error::shape(format!("window with D={}", grouping.n_variables()), window.d_len()));
    }
    grouping
        .groups
        .par_iter()
        .enumerate()
        .map(|(k, group)| {
            let block = window.select_columns(group);
            segment_group_indexed(Points::new(&block, group.len())?, config, k)
        })
        .collect()
}

impl Pipeline {
    pub fn new(segmentation: SegmentationConfig, attribution: AttributionConfig) -> Self {
        Self { segmentation, players: PlayerConfig::group_segment(), attribution, fixed_players: None }
    }

    pub fn validate(&self) -> Result<()> {
        self.segmentation.validate()?;
        self.attribution.validate()
    }

    pub fn player_set(&self, window: &Window, grouping: &Grouping) -> Result<(Vec<Segmentation>, PlayerSet)> {
        let (t_len, d_len) = (window.t_len(), window.d_len());
        if let Some(players) = &self.fixed_players {
            if (players.t_len(), players.d_len()) != (t_len, d_len) {
                return Err(Error::shape(
                    format!("{}x{} window", players.t_len(), players.d_len()),
                    format!("{t_len}x{d_len}"),
                ));
            }
            return Ok((Vec::new(), players.clone()));
        }
        match self.players.scheme {
            PlayerScheme::GroupSegment => {
                let segs = segment_window(window, grouping, &self.segmentation)?;
                let players = build_players(grouping, &segs, t_len, d_len)?;
                Ok((segs, players))
            }
            scheme => Ok((Vec::new(), baseline_players(scheme, t_len, d_len, self.players.params())?)),
        }
    }

    pub fn attribute<P: Predictor + ?Sized>(
        &self,
        predictor: &P,
        window: &Window,
        players: &PlayerSet,
        baseline: &MaskingBaseline,
    ) -> Result<AttributionResult> {
        match self.attribution.estimator {
            Estimator::Permutation => shapley_permutation(
                predictor,
                window,
                players,
                self.attribution.m,
                baseline,
                self.attribution.seed,
            ),
            Estimator::Exact => shapley_exact(predictor, window, players, baseline),
        }
    }

    pub fn explain<P: Predictor + ?Sized>(
        &self,
        predictor: &P,
        window: &Window,
        grouping: &Grouping,
        baseline: &MaskingBaseline,
    ) -> Result<Explanation> {
        self.validate()?;
        let (segmentations, players) = self.player_set(window, grouping)?;
        let result = self.attribute(predictor, window, &players, baseline)?;
        let map = project_to_cells(&result, &players)?;
        Ok(Explanation { segmentations, players, result, map })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::GroupingMethod;
    use crate::predictors::LinearPredictor;

    #[test]
    fn explains_linear_model() {
        let window = Window::new(4, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let grouping = Grouping::singletons(2, GroupingMethod::None, 0);
        let f = LinearPredictor::new(4, 2, vec![1.0; 8]).unwrap();
        let pipeline = Pipeline::new(SegmentationConfig::new(2, 0), AttributionConfig::new(5, 1));
        let baseline = MaskingBaseline::new(MaskingMode::Zero, vec![0.0; 2], vec![0.0; 2], 0).unwrap();
        let e = pipeline.explain(&f, &window, &grouping, &baseline).unwrap();
        assert_eq!(e.segmentations.len(), 2);
        assert!(e.result.efficiency_gap() < 1e-12);
        assert!((e.map.values().iter().sum::<f64>() - 36.0).abs() < 1e-12);
    }

    #[test]
    fn player_config_json() {
        let c: PlayerConfig = serde_json::from_str(r#"{"scheme":"window","window_len":4}"#).unwrap();
        assert_eq!(c.scheme, PlayerScheme::Window);
        assert_eq!(c.window_len, Some(4));
        let d: PlayerConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(d.scheme, PlayerScheme::GroupSegment);
    }
}
