//! Shapley attribution for multivariate time-series predictors over
//! group-segment players: variables are grouped by kernel dependence, each
//! group's time axis is split at detected distribution shifts, and every
//! (group, segment) block becomes one player.

pub mod attribution;
pub mod error;
pub mod evaluation;
pub mod grouping;
pub mod kernels;
pub mod linalg;
pub mod pipeline;
pub mod players;
pub mod predictors;
pub mod segmentation;
pub mod synth;
pub mod window;

pub use attribution::{
    mask, marginal_contribution, shapley_exact, shapley_permutation, AttributionResult, Coalition,
    MaskingBaseline, MaskingMode,
};
pub use error::{Error, Result};
pub use evaluation::{delta_auc, deletion_curve, project_to_cells, DeletionCurve, ImportanceMap, LossMode};
pub use grouping::{group_features, Grouping, GroupingConfig, GroupingMethod};
pub use pipeline::{AttributionConfig, Estimator, Explanation, Pipeline, PlayerConfig};
pub use players::{build_players, Player, PlayerScheme, PlayerSet};
pub use predictors::{Predictor, PredictorSpec};
pub use segmentation::{segment_group, Segment, Segmentation, SegmentationConfig, ThresholdMode};
pub use window::{Points, Sample1D, Window};
