use std::path::{Path, PathBuf};

use clap::ValueEnum;
use groupseg::evaluation::{default_fractions, BenchMethod, BudgetKind, DeletionSettings, LossMode, SweepAxis};
use groupseg::grouping::{GroupingConfig, GroupingMethod};
use groupseg::pipeline::{AttributionConfig, PlayerConfig};
use groupseg::players::PlayerScheme;
use groupseg::segmentation::{SegmentationConfig, ThresholdMode};
use groupseg::synth::{MeanShiftParams, PlantedBlocksParams, PlayerFixtureParams};
use groupseg::PredictorSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Per-dataset `(T, l_min)` pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Har,
    Ettm1,
    Ptbxl,
    Sp500,
}

impl Preset {
    pub fn t_len(self) -> usize {
        match self {
            Preset::Har => 96,
            Preset::Ettm1 => 128,
            Preset::Ptbxl => 1000,
            Preset::Sp500 => 20,
        }
    }

    pub fn l_min(self) -> usize {
        match self {
            Preset::Har => 10,
            Preset::Ettm1 => 13,
            Preset::Ptbxl => 100,
            Preset::Sp500 => 4,
        }
    }
}

/// A generated dataset, described in place of a manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticSpec {
    PlantedBlocks(PlantedBlocksParams),
    MeanShift(MeanShiftParams),
    PlayerFixture(PlayerFixtureParams),
}

impl SyntheticSpec {
    fn seed_mut(&mut self) -> &mut u64 {
        match self {
            SyntheticSpec::PlantedBlocks(p) => &mut p.seed,
            SyntheticSpec::MeanShift(p) => &mut p.seed,
            SyntheticSpec::PlayerFixture(p) => &mut p.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Path to a dataset manifest JSON.
    Manifest(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupingSection {
    #[serde(default = "default_method")]
    pub method: GroupingMethod,
    /// Group count for random grouping.
    #[serde(default)]
    pub k_hint: Option<usize>,
    #[serde(default)]
    pub n_hsic_subsample: Option<usize>,
    #[serde(default)]
    pub k_max: Option<usize>,
    #[serde(default)]
    pub quality_threshold: Option<f64>,
    #[serde(default)]
    pub max_refine_depth: Option<usize>,
    pub seed: u64,
}

fn default_method() -> GroupingMethod {
    GroupingMethod::Hsic
}

impl GroupingSection {
    pub fn config(&self) -> GroupingConfig {
        let mut c = GroupingConfig::with_seed(self.seed);
        if let Some(v) = self.n_hsic_subsample {
            c.n_hsic_subsample = v;
        }
        if let Some(v) = self.k_max {
            c.k_max = v;
        }
        if let Some(v) = self.quality_threshold {
            c.quality_threshold = v;
        }
        if let Some(v) = self.max_refine_depth {
            c.max_refine_depth = v;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationSection {
    /// May be omitted when a preset supplies it.
    #[serde(default)]
    pub l_min: Option<usize>,
    #[serde(default)]
    pub j_max: Option<usize>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub num_permutations: Option<usize>,
    #[serde(default)]
    pub threshold_mode: ThresholdMode,
    pub seed: u64,
}

impl SegmentationSection {
    pub fn config(&self) -> CliResult<SegmentationConfig> {
        let l_min = self
            .l_min
            .ok_or_else(|| CliError::validation("segmentation.l_min is required unless --preset is given"))?;
        let mut c = SegmentationConfig::new(l_min, self.seed);
        if let Some(v) = self.j_max {
            c.j_max = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.num_permutations {
            c.num_permutations = v;
        }
        c.threshold_mode = self.threshold_mode;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayersSection {
    #[serde(default = "default_scheme")]
    pub scheme: PlayerScheme,
    #[serde(default)]
    pub window_len: Option<usize>,
    #[serde(default)]
    pub n_subseq: Option<usize>,
    /// A player set JSON used as-is instead of building players.
    #[serde(default)]
    pub player_set: Option<PathBuf>,
}

fn default_scheme() -> PlayerScheme {
    PlayerScheme::GroupSegment
}

impl Default for PlayersSection {
    fn default() -> Self {
        Self { scheme: default_scheme(), window_len: None, n_subseq: None, player_set: None }
    }
}

impl PlayersSection {
    pub fn config(&self) -> PlayerConfig {
        PlayerConfig { scheme: self.scheme, window_len: self.window_len, n_subseq: self.n_subseq }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessSection {
    pub n_runs: usize,
    pub subset_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default)]
    pub loss_mode: LossMode,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<GroupingMethod>,
    #[serde(default)]
    pub robustness: Option<RobustnessSection>,
    #[serde(default)]
    pub sweeps: Vec<SweepAxis>,
}

fn default_strategies() -> Vec<GroupingMethod> {
    vec![GroupingMethod::Hsic, GroupingMethod::Random]
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            fractions: default_fractions(),
            loss_mode: LossMode::default(),
            strategies: default_strategies(),
            robustness: None,
            sweeps: Vec::new(),
        }
    }
}

impl EvaluationSection {
    pub fn deletion(&self) -> DeletionSettings {
        DeletionSettings { fractions: self.fractions.clone(), loss_mode: self.loss_mode }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    #[serde(default = "default_bench_methods")]
    pub methods: Vec<BenchMethod>,
    #[serde(default = "default_budgets")]
    pub budgets: Vec<usize>,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub budget_kind: BudgetKind,
}

fn default_bench_methods() -> Vec<BenchMethod> {
    [PlayerScheme::GroupSegment, PlayerScheme::Cell]
        .into_iter()
        .map(|s| BenchMethod { tag: s.as_str().to_string(), players: PlayerConfig::scheme(s) })
        .collect()
}

fn default_budgets() -> Vec<usize> {
    vec![10, 20, 30, 50]
}

fn default_samples() -> usize {
    30
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            methods: default_bench_methods(),
            budgets: default_budgets(),
            n_samples: default_samples(),
            budget_kind: BudgetKind::default(),
        }
    }
}

/// Everything a subcommand needs. Seeds have no defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    pub dataset: DatasetSource,
    pub predictor: PredictorSpec,
    pub grouping: GroupingSection,
    pub segmentation: SegmentationSection,
    #[serde(default)]
    pub players: PlayersSection,
    pub attribution: AttributionConfig,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub bench: BenchSection,
    /// Indices of the dataset windows to explain; all when omitted.
    #[serde(default)]
    pub targets: Option<Vec<usize>>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// Input to the `synth` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub run_id: String,
    pub synthetic: SyntheticSpec,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn check_run_id(run_id: &str) -> CliResult<()> {
    let ok = !run_id.is_empty()
        && run_id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if !ok {
        return Err(CliError::validation(format!(
            "run_id {run_id:?} must be non-empty and use only letters, digits, '-', '_' or '.'"
        )));
    }
    Ok(())
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("invalid {what} {}: {e}", path.display())))
}

/// Makes `path` relative to `base` unless it is absolute.
pub fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn parent(path: &Path) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

impl RunConfig {
    /// Reads the config and resolves its relative paths against the config's
    /// directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let mut c: RunConfig = read_json(path, "config")?;
        check_run_id(&c.run_id)?;
        let base = parent(path);
        if let DatasetSource::Manifest(m) = &mut c.dataset {
            *m = resolve(&base, m);
        }
        if let Some(p) = &mut c.players.player_set {
            *p = resolve(&base, p);
        }
        if let Some(o) = &mut c.output_dir {
            *o = resolve(&base, o);
        }
        Ok(c)
    }

    pub fn override_seed(&mut self, seed: u64) {
        self.grouping.seed = seed;
        self.segmentation.seed = seed;
        self.attribution.seed = seed;
        if let DatasetSource::Synthetic(s) = &mut self.dataset {
            *s.seed_mut() = seed;
        }
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        self.segmentation.l_min = Some(preset.l_min());
    }
}

impl SynthConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let mut c: SynthConfig = read_json(path, "synth config")?;
        check_run_id(&c.run_id)?;
        if let Some(o) = &mut c.output_dir {
            *o = resolve(&parent(path), o);
        }
        Ok(c)
    }

    pub fn override_seed(&mut self, seed: u64) {
        *self.synthetic.seed_mut() = seed;
    }
}
