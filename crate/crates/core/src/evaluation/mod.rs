//! Faithfulness, robustness, sensitivity and runtime experiments over
//! cell-level importance maps.

mod deletion;
mod harness;
mod metrics;

pub use deletion::{
    default_fractions, delta_auc, deletion_curve, masked_count, project_to_cells, DeletionCurve, ImportanceMap,
    LossMode,
};
pub use harness::{
    runtime_bench, BenchMethod, BenchRecord, BenchSetup, BudgetKind, ComparisonRow, ComparisonTable,
    DeletionSettings, Harness, PairSimilarity, RobustnessReport, SensitivityRow, SensitivityTable, SweepAxis,
    Targets, REPORT_FRACTION,
};
pub use metrics::{adjusted_rand_index, cosine, linear_fit, mean_std, LinearFit};
