use std::path::{Path, PathBuf};

use clap::ValueEnum;
use groupseg::evaluation::{
    delta_auc, deletion_curve, runtime_bench, BenchSetup, Harness, Targets, REPORT_FRACTION,
};
use groupseg::grouping::{alternative_grouping, group_features, Grouping, GroupingMethod};
use groupseg::pipeline::{segment_window, Pipeline};
use groupseg::players::PlayerSet;
use groupseg::synth::{planted_blocks, player_fixture};
use groupseg::{MaskingBaseline, Predictor};
use serde::Serialize;

use crate::config::{
    read_json, DatasetSource, GroupingSection, PlayersSection, Preset, RunConfig, SynthConfig, SyntheticSpec,
};
use crate::dataset::{self, window_csv, Dataset, DatasetManifest};
use crate::error::{CliError, CliResult};
use crate::output::Artifacts;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Group variables and write the grouping.
    Group,
    /// Segment every group of every target window.
    Segment,
    /// Attribute target windows and write importance maps.
    Explain,
    /// Deletion curves, grouping comparison, robustness and sensitivity.
    Evaluate,
    /// Runtime over permutation budgets.
    Bench,
    /// Generate a synthetic dataset.
    Synth,
}

#[derive(Clone, Debug)]
pub struct Options {
    pub command: Command,
    pub config: PathBuf,
    pub output_dir: Option<PathBuf>,
    pub seed_override: Option<u64>,
    pub preset: Option<Preset>,
    pub quiet: bool,
}

/// Runs one subcommand and returns the written paths. Nothing is written
/// unless every step succeeds.
pub fn run(opts: &Options) -> CliResult<Vec<PathBuf>> {
    let (artifacts, dir) = match opts.command {
        Command::Synth => {
            let mut cfg = SynthConfig::load(&opts.config)?;
            if let Some(seed) = opts.seed_override {
                cfg.override_seed(seed);
            }
            let dir = output_dir(opts, cfg.output_dir.as_deref())?;
            (synth(&cfg)?, dir)
        }
        command => {
            let mut cfg = RunConfig::load(&opts.config)?;
            if let Some(seed) = opts.seed_override {
                cfg.override_seed(seed);
            }
            if let Some(preset) = opts.preset {
                cfg.apply_preset(preset);
            }
            let dir = output_dir(opts, cfg.output_dir.as_deref())?;
            let ctx = Context::new(cfg, opts.preset)?;
            let artifacts = match command {
                Command::Group => ctx.group()?,
                Command::Segment => ctx.segment()?,
                Command::Explain => ctx.explain()?,
                Command::Evaluate => ctx.evaluate()?,
                Command::Bench => ctx.bench()?,
                Command::Synth => unreachable!(),
            };
            (artifacts, dir)
        }
    };
    let written = artifacts.commit(&dir)?;
    if !opts.quiet {
        for p in &written {
            println!("wrote {}", p.display());
        }
    }
    Ok(written)
}

fn output_dir(opts: &Options, from_config: Option<&Path>) -> CliResult<PathBuf> {
    opts.output_dir
        .clone()
        .or_else(|| from_config.map(Path::to_path_buf))
        .ok_or_else(|| CliError::validation("no output directory: pass --output-dir or set output_dir"))
}

/// A validated config with its dataset and predictor loaded.
struct Context {
    cfg: RunConfig,
    data: Dataset,
    targets: Vec<usize>,
    target_windows: Vec<groupseg::Window>,
    target_labels: Option<Vec<f64>>,
    pipeline: Pipeline,
    predictor: Box<dyn Predictor>,
}

impl Context {
    fn new(cfg: RunConfig, preset: Option<Preset>) -> CliResult<Self> {
        let data = dataset::load(&cfg.dataset)?;
        if let Some(p) = preset {
            if data.t_len() != p.t_len() {
                return Err(CliError::validation(format!(
                    "preset {p:?} expects T={}, dataset has T={}",
                    p.t_len(),
                    data.t_len()
                )));
            }
        }
        if data.background.iter().any(|w| w.d_len() != data.d_len()) {
            return Err(CliError::validation("background windows disagree with the dataset on D"));
        }
        let targets = cfg.targets.clone().unwrap_or_else(|| (0..data.windows.len()).collect());
        if targets.is_empty() {
            return Err(CliError::validation("targets must list at least one window"));
        }
        if let Some(&bad) = targets.iter().find(|&&i| i >= data.windows.len()) {
            return Err(CliError::validation(format!(
                "target {bad} out of range for {} windows",
                data.windows.len()
            )));
        }
        let target_windows = targets.iter().map(|&i| data.windows[i].clone()).collect();
        let target_labels = data.labels.as_ref().map(|l| targets.iter().map(|&i| l[i]).collect());

        let mut pipeline = Pipeline::new(cfg.segmentation.config()?, cfg.attribution.clone());
        pipeline.players = cfg.players.config();
        pipeline.fixed_players = load_player_set(&cfg.players)?;
        pipeline.validate()?;
        cfg.grouping.config().validate()?;
        if let Some((t, d)) = cfg.predictor.shape() {
            if (t, d) != (data.t_len(), data.d_len()) {
                return Err(CliError::validation(format!(
                    "predictor expects {t}x{d} windows, dataset has {}x{}",
                    data.t_len(),
                    data.d_len()
                )));
            }
        }
        let predictor = cfg.predictor.build().map_err(|e| match e {
            groupseg::Error::Predictor(m) => CliError::runtime(m),
            other => other.into(),
        })?;
        Ok(Self { cfg, data, targets, target_windows, target_labels, pipeline, predictor })
    }

    fn grouping(&self) -> CliResult<Grouping> {
        let mut g = compute_grouping(&self.cfg.grouping, &self.data.background)?;
        g.variable_names = self.data.variable_names.clone();
        Ok(g)
    }

    fn baseline(&self) -> CliResult<MaskingBaseline> {
        Ok(self.pipeline.attribution.baseline(&self.data.background)?)
    }

    fn group(&self) -> CliResult<Artifacts> {
        let mut out = Artifacts::new(&self.cfg.run_id);
        out.json("grouping", &self.grouping()?)?;
        Ok(out)
    }

    fn segment(&self) -> CliResult<Artifacts> {
        let grouping = self.grouping()?;
        let mut out = Artifacts::new(&self.cfg.run_id);
        out.json("grouping", &grouping)?;
        for (&i, w) in self.targets.iter().zip(&self.target_windows) {
            for s in segment_window(w, &grouping, &self.pipeline.segmentation)? {
                out.json(&format!("segmentation_w{i}_g{}", s.group_index), &s)?;
            }
        }
        Ok(out)
    }

    fn explain(&self) -> CliResult<Artifacts> {
        let grouping = self.grouping()?;
        let baseline = self.baseline()?;
        let mut out = Artifacts::new(&self.cfg.run_id);
        out.json("grouping", &grouping)?;
        for (&i, w) in self.targets.iter().zip(&self.target_windows) {
            let e = self.pipeline.explain(&*self.predictor, w, &grouping, &baseline)?;
            out.json(&format!("players_w{i}"), &e.players)?;
            out.json(&format!("attribution_w{i}"), &e.result)?;
            out.json(&format!("importance_w{i}"), &e.map)?;
            out.text(&format!("importance_w{i}"), "csv", e.map.to_csv(&self.data.variable_names)?);
        }
        Ok(out)
    }

    fn evaluate(&self) -> CliResult<Artifacts> {
        #[derive(Serialize)]
        struct WindowSummary {
            window: usize,
            delta_auc: f64,
            delta_loss_at_060: Option<f64>,
            efficiency_gap: f64,
            conservation_gap: f64,
        }
        #[derive(Serialize)]
        struct Summary {
            windows: Vec<WindowSummary>,
            mean_delta_auc: f64,
        }

        let grouping = self.grouping()?;
        let baseline = self.baseline()?;
        let deletion = self.cfg.evaluation.deletion();
        let mut out = Artifacts::new(&self.cfg.run_id);
        let mut rows = Vec::new();
        for (k, (&i, w)) in self.targets.iter().zip(&self.target_windows).enumerate() {
            let e = self.pipeline.explain(&*self.predictor, w, &grouping, &baseline)?;
            let label = self.target_labels.as_ref().map(|l| l[k]);
            let curve = deletion_curve(
                &*self.predictor,
                w,
                &e.map,
                &deletion.fractions,
                &baseline,
                deletion.loss_mode,
                label,
            )?;
            let map_total: f64 = e.map.values().iter().sum();
            rows.push(WindowSummary {
                window: i,
                delta_auc: delta_auc(&curve),
                delta_loss_at_060: curve.at(REPORT_FRACTION),
                efficiency_gap: e.result.efficiency_gap(),
                conservation_gap: (map_total - e.result.phi.iter().sum::<f64>()).abs(),
            });
            out.json(&format!("deletion_w{i}"), &curve)?;
            out.text(&format!("deletion_w{i}"), "csv", curve.to_csv());
        }
        let mean_delta_auc = rows.iter().map(|r| r.delta_auc).sum::<f64>() / rows.len() as f64;
        out.json("evaluation", &Summary { windows: rows, mean_delta_auc })?;

        let harness = Harness {
            predictor: &*self.predictor,
            background: &self.data.background,
            pipeline: &self.pipeline,
            deletion: &deletion,
        };
        let targets = Targets { windows: &self.target_windows, labels: self.target_labels.as_deref() };
        if !self.cfg.evaluation.strategies.is_empty() {
            let table =
                harness.grouping_comparison(targets, &self.cfg.evaluation.strategies, &self.cfg.grouping.config())?;
            out.json("grouping_comparison", &table)?;
            out.text("grouping_comparison", "csv", table.to_csv());
        }
        if let Some(r) = &self.cfg.evaluation.robustness {
            let report = harness.robustness_cosine(&self.target_windows[0], &grouping, r.n_runs, r.subset_size)?;
            out.json("robustness", &report)?;
            out.text("robustness", "csv", report.to_csv());
        }
        for axis in &self.cfg.evaluation.sweeps {
            let table = harness.sensitivity_sweep(targets, &grouping, axis)?;
            out.json(&format!("sensitivity_{}", axis.name()), &table)?;
            out.text(&format!("sensitivity_{}", axis.name()), "csv", table.to_csv());
        }
        Ok(out)
    }

    fn bench(&self) -> CliResult<Artifacts> {
        let grouping = self.grouping()?;
        let baseline = self.baseline()?;
        let b = &self.cfg.bench;
        let setup = BenchSetup {
            predictor: &*self.predictor,
            windows: &self.target_windows,
            grouping: &grouping,
            baseline: &baseline,
            pipeline: &self.pipeline,
            budget_kind: b.budget_kind,
        };
        let records = runtime_bench(&setup, &b.methods, &b.budgets, b.n_samples)?;
        let mut out = Artifacts::new(&self.cfg.run_id);
        out.json("bench", &records)?;
        let mut csv = String::from(groupseg::evaluation::BenchRecord::csv_header());
        for r in &records {
            csv.push_str(&r.csv_row());
        }
        out.text("bench", "csv", csv);
        Ok(out)
    }
}

fn compute_grouping(section: &GroupingSection, background: &[groupseg::Window]) -> CliResult<Grouping> {
    let config = section.config();
    Ok(match section.method {
        GroupingMethod::Hsic => group_features(background, &config)?,
        GroupingMethod::Random => {
            let k = section
                .k_hint
                .ok_or_else(|| CliError::validation("random grouping needs grouping.k_hint"))?;
            alternative_grouping(background, GroupingMethod::Random, k, &config)?
        }
        method => alternative_grouping(background, method, 1, &config)?,
    })
}

fn load_player_set(section: &PlayersSection) -> CliResult<Option<PlayerSet>> {
    section.player_set.as_deref().map(|p| read_json(p, "player set")).transpose()
}

fn synth(cfg: &SynthConfig) -> CliResult<Artifacts> {
    let mut out = Artifacts::new(&cfg.run_id);
    let data = dataset::generate(&cfg.synthetic)?;
    let names = data.variable_names.clone();
    let mut windows = Vec::new();
    for (i, w) in data.windows.iter().enumerate() {
        let artifact = format!("window_{i:03}");
        windows.push(PathBuf::from(out.name(&artifact, "csv")));
        out.text(&artifact, "csv", window_csv(w, &names));
    }
    let mut background = None;
    match &cfg.synthetic {
        SyntheticSpec::PlantedBlocks(p) => {
            #[derive(Serialize)]
            struct Plant<'a> {
                blocks: &'a [Vec<usize>],
                labels: Vec<usize>,
                params: &'a groupseg::synth::PlantedBlocksParams,
            }
            let planted = planted_blocks(p)?;
            out.json("plant", &Plant { blocks: &planted.blocks, labels: planted.labels(), params: p })?;
        }
        SyntheticSpec::MeanShift(p) => {
            out.json("shift", p)?;
        }
        SyntheticSpec::PlayerFixture(p) => {
            let fixture = player_fixture(p)?;
            let mut files = Vec::new();
            for (i, w) in data.background.iter().enumerate() {
                let artifact = format!("background_{i:03}");
                files.push(PathBuf::from(out.name(&artifact, "csv")));
                out.text(&artifact, "csv", window_csv(w, &names));
            }
            background = Some(files);
            out.json("players", &fixture.players)?;
            out.json("predictor", &fixture.spec())?;
            let run = serde_json::json!({
                "run_id": format!("{}_explain", cfg.run_id),
                "dataset": { "manifest": out.name("manifest", "json") },
                "predictor": fixture.spec(),
                "grouping": { "method": "none", "seed": p.seed },
                "segmentation": { "l_min": 8, "seed": p.seed },
                "players": { "player_set": out.name("players", "json") },
                "attribution": { "M": 10, "baseline": "mean", "seed": p.seed },
                "evaluation": { "strategies": [] },
            });
            out.json("config", &run)?;
        }
    }
    let manifest = DatasetManifest {
        windows,
        background,
        variable_names: names,
        t_len: data.t_len(),
        d_len: data.d_len(),
        labels: None,
    };
    out.json("manifest", &manifest)?;
    Ok(out)
}

/// The dataset a config refers to, for callers that only need the data.
pub fn load_dataset(source: &DatasetSource) -> CliResult<Dataset> {
    dataset::load(source)
}
