use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::deletion::{default_fractions, delta_auc, deletion_curve, DeletionCurve, LossMode};
use super::metrics::{cosine, mean_std};
use crate::attribution::{MaskingBaseline, MaskingMode};
use crate::error::{Error, Result};
use crate::grouping::{alternative_grouping, group_features, Grouping, GroupingConfig, GroupingMethod};
use crate::pipeline::{Explanation, Pipeline, PlayerConfig};
use crate::predictors::{CallCounter, Predictor};
use crate::window::Window;

/// Deletion fraction reported alongside ΔAUC in sensitivity tables.
pub const REPORT_FRACTION: f64 = 0.60;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeletionSettings {
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default)]
    pub loss_mode: LossMode,
}

impl Default for DeletionSettings {
    fn default() -> Self {
        Self { fractions: default_fractions(), loss_mode: LossMode::OutputDeviation }
    }
}

/// Windows to explain with their optional labels.
#[derive(Clone, Copy, Debug)]
pub struct Targets<'a> {
    pub windows: &'a [Window],
    pub labels: Option<&'a [f64]>,
}

impl<'a> Targets<'a> {
    pub fn new(windows: &'a [Window]) -> Self {
        Self { windows, labels: None }
    }

    fn check(&self) -> Result<()> {
        if self.windows.is_empty() {
            return Err(Error::invalid("no windows to evaluate"));
        }
        if let Some(l) = self.labels {
            if l.len() != self.windows.len() {
                return Err(Error::shape(format!("{} labels", self.windows.len()), l.len()));
            }
        }
        Ok(())
    }

    fn label(&self, i: usize) -> Option<f64> {
        self.labels.map(|l| l[i])
    }
}

/// Shared context for the faithfulness and sensitivity experiments.
pub struct Harness<'a, P: ?Sized> {
    pub predictor: &'a P,
    pub background: &'a [Window],
    pub pipeline: &'a Pipeline,
    pub deletion: &'a DeletionSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: GroupingMethod,
    pub groups: usize,
    pub delta_auc: f64,
    pub curve: DeletionCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,groups,delta_auc\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.strategy.as_str(), r.groups, r.delta_auc));
        }
        out
    }

    pub fn row(&self, strategy: GroupingMethod) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSimilarity {
    pub run_a: usize,
    pub run_b: usize,
    /// `None` when either map is all zeros.
    pub cosine: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub runs: usize,
    pub subset_size: usize,
    pub pairs: Vec<PairSimilarity>,
    pub undefined: usize,
    pub min: Option<f64>,
    pub mean: Option<f64>,
    pub max: Option<f64>,
}

impl RobustnessReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("run_a,run_b,cosine\n");
        for p in &self.pairs {
            let c = p.cosine.map_or_else(|| "undefined".to_string(), |c| c.to_string());
            out.push_str(&format!("{},{},{c}\n", p.run_a, p.run_b));
        }
        out
    }
}

/// The varied setting of a sensitivity sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "snake_case")]
pub enum SweepAxis {
    LMin(Vec<usize>),
    MaskingMode(Vec<MaskingMode>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::LMin(_) => "l_min",
            SweepAxis::MaskingMode(_) => "masking_mode",
        }
    }

    fn len(&self) -> usize {
        match self {
            SweepAxis::LMin(v) => v.len(),
            SweepAxis::MaskingMode(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub value: String,
    pub delta_auc: f64,
    pub delta_loss_at_060: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTable {
    pub axis: String,
    pub rows: Vec<SensitivityRow>,
}

impl SensitivityTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},delta_auc,delta_loss_at_0.60\n", self.axis);
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.value, r.delta_auc, r.delta_loss_at_060));
        }
        out
    }
}

impl<P: Predictor + ?Sized> Harness<'_, P> {
    fn baseline(&self, pipeline: &Pipeline) -> Result<MaskingBaseline> {
        pipeline.attribution.baseline(self.background)
    }

    fn explain_and_delete(
        &self,
        pipeline: &Pipeline,
        window: &Window,
        label: Option<f64>,
        grouping: &Grouping,
        baseline: &MaskingBaseline,
    ) -> Result<(Explanation, DeletionCurve)> {
        let e = pipeline.explain(self.predictor, window, grouping, baseline)?;
        let curve = deletion_curve(
            self.predictor,
            window,
            &e.map,
            &self.deletion.fractions,
            baseline,
            self.deletion.loss_mode,
            label,
        )?;
        Ok((e, curve))
    }

    /// Pointwise mean deletion curve over the targets.
    pub fn mean_curve(
        &self,
        pipeline: &Pipeline,
        targets: Targets<'_>,
        grouping: &Grouping,
    ) -> Result<DeletionCurve> {
        targets.check()?;
        let baseline = self.baseline(pipeline)?;
        let run = |i: usize| {
            self.explain_and_delete(pipeline, &targets.windows[i], targets.label(i), grouping, &baseline)
                .map(|(_, c)| c)
        };
        let curves: Vec<DeletionCurve> = if self.predictor.concurrency_safe() {
            (0..targets.windows.len()).into_par_iter().map(run).collect::<Result<_>>()?
        } else {
            (0..targets.windows.len()).map(run).collect::<Result<_>>()?
        };
        DeletionCurve::mean(&curves)
    }

    /// Runs the pipeline once per grouping strategy with everything else
    /// fixed. Random grouping uses as many groups as HSIC grouping finds.
    pub fn grouping_comparison(
        &self,
        targets: Targets<'_>,
        strategies: &[GroupingMethod],
        grouping_config: &GroupingConfig,
    ) -> Result<ComparisonTable> {
        if strategies.is_empty() {
            return Err(Error::invalid("no grouping strategies to compare"));
        }
        let hsic = group_features(self.background, grouping_config)?;
        let rows = strategies
            .iter()
            .map(|&strategy| {
                let grouping = match strategy {
                    GroupingMethod::Hsic => hsic.clone(),
                    other => alternative_grouping(self.background, other, hsic.len(), grouping_config)?,
                };
                let curve = self.mean_curve(self.pipeline, targets, &grouping)?;
                Ok(ComparisonRow { strategy, groups: grouping.len(), delta_auc: delta_auc(&curve), curve })
            })
            .collect::<Result<_>>()?;
        Ok(ComparisonTable { rows })
    }

    /// Re-explains one window with `n_runs` seeded background subsets and
    /// compares the resulting maps pairwise.
    pub fn robustness_cosine(
        &self,
        window: &Window,
        grouping: &Grouping,
        n_runs: usize,
        subset_size: usize,
    ) -> Result<RobustnessReport> {
        if n_runs < 2 {
            return Err(Error::invalid("robustness needs at least two runs"));
        }
        if subset_size == 0 || subset_size > self.background.len() {
            return Err(Error::invalid(format!(
                "background subset of {subset_size} from a pool of {}",
                self.background.len()
            )));
        }
        let maps = (0..n_runs)
            .into_par_iter()
            .map(|run| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.pipeline.attribution.seed);
                rng.set_stream(run as u64);
                let mut idx = rand::seq::index::sample(&mut rng, self.background.len(), subset_size).into_vec();
                idx.sort_unstable();
                let subset: Vec<Window> = idx.iter().map(|&i| self.background[i].clone()).collect();
                let baseline = self.pipeline.attribution.baseline(&subset)?;
                let e = self.pipeline.explain(self.predictor, window, grouping, &baseline)?;
                Ok(e.map.values().to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        let mut pairs = Vec::new();
        for a in 0..n_runs {
            for b in a + 1..n_runs {
                pairs.push(PairSimilarity { run_a: a, run_b: b, cosine: cosine(&maps[a], &maps[b]) });
            }
        }
        let defined: Vec<f64> = pairs.iter().filter_map(|p| p.cosine).collect();
        let (min, mean, max) = if defined.is_empty() {
            (None, None, None)
        } else {
            (
                Some(defined.iter().copied().fold(f64::INFINITY, f64::min)),
                Some(defined.iter().sum::<f64>() / defined.len() as f64),
                Some(defined.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            )
        };
        Ok(RobustnessReport {
            runs: n_runs,
            subset_size,
            undefined: pairs.len() - defined.len(),
            pairs,
            min,
            mean,
            max,
        })
    }

    /// ΔAUC and Δloss at 0.60 with only `axis` varied.
    pub fn sensitivity_sweep(
        &self,
        targets: Targets<'_>,
        grouping: &Grouping,
        axis: &SweepAxis,
    ) -> Result<SensitivityTable> {
        if axis.len() == 0 {
            return Err(Error::invalid("sensitivity sweep needs at least one value"));
        }
        let variants: Vec<(String, Pipeline)> = match axis {
            SweepAxis::LMin(values) => values
                .iter()
                .map(|&l| {
                    let mut p = self.pipeline.clone();
                    p.segmentation.l_min = l;
                    (l.to_string(), p)
                })
                .collect(),
            SweepAxis::MaskingMode(modes) => modes
                .iter()
                .map(|&m| {
                    let mut p = self.pipeline.clone();
                    p.attribution.baseline = m;
                    (m.as_str().to_string(), p)
                })
                .collect(),
        };
        let rows = variants
            .into_iter()
            .map(|(value, pipeline)| {
                let curve = self.mean_curve(&pipeline, targets, grouping)?;
                let at = curve.at(REPORT_FRACTION).ok_or_else(|| {
                    Error::invalid("deletion grid must contain 0.60 for sensitivity tables")
                })?;
                Ok(SensitivityRow { value, delta_auc: delta_auc(&curve), delta_loss_at_060: at })
            })
            .collect::<Result<_>>()?;
        Ok(SensitivityTable { axis: axis.name().to_string(), rows })
    }
}

/// How a bench budget translates to permutations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetKind {
    /// The budget is the permutation count `M`.
    #[default]
    Permutations,
    /// The budget caps forward evaluations: `max(1, ⌊budget/(|P|+1)⌋)` permutations.
    ForwardCalls,
}

impl BudgetKind {
    pub fn permutations(self, budget: usize, players: usize) -> usize {
        match self {
            BudgetKind::Permutations => budget,
            BudgetKind::ForwardCalls => (budget / (players + 1)).max(1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchMethod {
    pub tag: String,
    pub players: PlayerConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: String,
    pub budget: usize,
    pub mean_seconds: f64,
    pub std_seconds: f64,
    pub n_samples: usize,
    pub mean_players: f64,
    /// Total predictor evaluations over all samples.
    pub forward_calls: u64,
}

impl BenchRecord {
    pub fn csv_header() -> &'static str {
        "method,budget,mean_seconds,std_seconds,n_samples,mean_players,forward_calls\n"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}\n",
            self.method,
            self.budget,
            self.mean_seconds,
            self.std_seconds,
            self.n_samples,
            self.mean_players,
            self.forward_calls
        )
    }
}

/// Inputs to [`runtime_bench`].
pub struct BenchSetup<'a, P: ?Sized> {
    pub predictor: &'a P,
    pub windows: &'a [Window],
    pub grouping: &'a Grouping,
    pub baseline: &'a MaskingBaseline,
    pub pipeline: &'a Pipeline,
    pub budget_kind: BudgetKind,
}

/// Wall-clock seconds per sample, including player construction and masked
/// sample generation, on a single thread. Sample `i` explains
/// `windows[i % windows.len()]`. Samples are interleaved round-robin over
/// every (method, budget) pair so slow drift in machine speed spreads evenly
/// instead of landing on one budget.
pub fn runtime_bench<P: Predictor + ?Sized>(
    setup: &BenchSetup<'_, P>,
    methods: &[BenchMethod],
    budgets: &[usize],
    n_samples: usize,
) -> Result<Vec<BenchRecord>> {
    if budgets.is_empty() || methods.is_empty() {
        return Err(Error::invalid("bench needs at least one method and one budget"));
    }
    if n_samples == 0 || setup.windows.is_empty() {
        return Err(Error::invalid("bench needs n_samples >= 1 and at least one window"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::invalid(format!("cannot build bench thread pool: {e}")))?;
    let counter = CallCounter::new(setup.predictor);
    let configs: Vec<(&BenchMethod, usize)> =
        methods.iter().flat_map(|m| budgets.iter().map(move |&b| (m, b))).collect();
    pool.install(|| {
        let mut seconds = vec![Vec::with_capacity(n_samples); configs.len()];
        let mut players_total = vec![0usize; configs.len()];
        let mut calls = vec![0usize; configs.len()];
        for i in 0..n_samples {
            let window = &setup.windows[i % setup.windows.len()];
            for (c, &(method, budget)) in configs.iter().enumerate() {
                let mut pipeline = setup.pipeline.clone();
                pipeline.players = method.players;
                pipeline.fixed_players = None;
                let before = counter.calls();
                let start = Instant::now();
                let (_, players) = pipeline.player_set(window, setup.grouping)?;
                pipeline.attribution.m = setup.budget_kind.permutations(budget, players.len());
                pipeline.attribute(&counter, window, &players, setup.baseline)?;
                seconds[c].push(start.elapsed().as_secs_f64());
                calls[c] += counter.calls() - before;
                players_total[c] += players.len();
            }
        }
        let records = configs
            .iter()
            .enumerate()
            .map(|(c, &(method, budget))| {
                let (mean, std) = mean_std(&seconds[c]);
                BenchRecord {
                    method: method.tag.clone(),
                    budget,
                    mean_seconds: mean,
                    std_seconds: std,
                    n_samples,
                    mean_players: players_total[c] as f64 / n_samples as f64,
                    forward_calls: calls[c] as u64,
                }
            })
            .collect();
        Ok(records)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::AttributionConfig;
    use crate::players::PlayerScheme;
    use crate::predictors::LinearPredictor;
    use crate::segmentation::SegmentationConfig;

    fn setup() -> (LinearPredictor, Vec<Window>, Pipeline) {
        let windows: Vec<Window> = (0..6)
            .map(|k| Window::new(8, 2, (0..16).map(|i| ((i * 7 + k * 3) % 11) as f64).collect()).unwrap())
            .collect();
        let f = LinearPredictor::new(8, 2, (0..16).map(|i| (i % 5) as f64 - 2.0).collect()).unwrap();
        let pipeline = Pipeline::new(SegmentationConfig::new(2, 3), AttributionConfig::new(4, 9));
        (f, windows, pipeline)
    }

    #[test]
    fn sweep_shapes_and_determinism() {
        let (f, windows, pipeline) = setup();
        let deletion = DeletionSettings::default();
        let h = Harness { predictor: &f, background: &windows, pipeline: &pipeline, deletion: &deletion };
        let grouping = Grouping::singletons(2, GroupingMethod::None, 0);
        let axis = SweepAxis::MaskingMode(vec![MaskingMode::Mean, MaskingMode::Zero, MaskingMode::Noise]);
        let t = h.sensitivity_sweep(Targets::new(&windows[..2]), &grouping, &axis).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t, h.sensitivity_sweep(Targets::new(&windows[..2]), &grouping, &axis).unwrap());
        let axis = SweepAxis::LMin(vec![2, 3, 4]);
        assert_eq!(h.sensitivity_sweep(Targets::new(&windows[..1]), &grouping, &axis).unwrap().rows.len(), 3);
        assert!(h.sensitivity_sweep(Targets::new(&windows), &grouping, &SweepAxis::LMin(vec![])).is_err());
        let json = serde_json::to_string(&SweepAxis::LMin(vec![4, 6])).unwrap();
        assert_eq!(json, r#"{"axis":"l_min","values":[4,6]}"#);
    }

    #[test]
    fn robustness_with_full_pool_is_identical() {
        let (f, windows, pipeline) = setup();
        let deletion = DeletionSettings::default();
        let h = Harness { predictor: &f, background: &windows, pipeline: &pipeline, deletion: &deletion };
        let grouping = Grouping::singletons(2, GroupingMethod::None, 0);
        let r = h.robustness_cosine(&windows[0], &grouping, 3, windows.len()).unwrap();
        assert_eq!(r.pairs.len(), 3);
        assert!(r.pairs.iter().all(|p| (p.cosine.unwrap() - 1.0).abs() < 1e-12));
        assert!(h.robustness_cosine(&windows[0], &grouping, 1, 2).is_err());
    }

    #[test]
    fn bench_shape_and_counts() {
        let (f, windows, pipeline) = setup();
        let grouping = Grouping::singletons(2, GroupingMethod::None, 0);
        let baseline = pipeline.attribution.baseline(&windows).unwrap();
        let setup = BenchSetup {
            predictor: &f,
            windows: &windows,
            grouping: &grouping,
            baseline: &baseline,
            pipeline: &pipeline,
            budget_kind: BudgetKind::Permutations,
        };
        let methods = [
            BenchMethod { tag: "cell".into(), players: PlayerConfig::scheme(PlayerScheme::Cell) },
            BenchMethod { tag: "timestep".into(), players: PlayerConfig::scheme(PlayerScheme::Timestep) },
        ];
        let records = runtime_bench(&setup, &methods, &[10, 20, 30, 50], 1).unwrap();
        assert_eq!(records.len(), 8);
        assert!(records.iter().all(|r| r.std_seconds == 0.0));
        assert_eq!(records[0].forward_calls, 10 * 17);
        assert_eq!(records[4].forward_calls, 10 * 9);
        assert_eq!(BudgetKind::ForwardCalls.permutations(100, 9), 10);
        assert_eq!(BudgetKind::ForwardCalls.permutations(5, 9), 1);
    }
}
