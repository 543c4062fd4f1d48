use std::path::Path;
use std::process::{Command, Output};

use groupseg::synth::FIXTURE_WEIGHTS;
use groupseg::{AttributionResult, Grouping};

fn groupseg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_groupseg")).args(args).current_dir(cwd).output().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) {
    std::fs::write(dir.join(name), body).unwrap();
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn fixture_round_trip_recovers_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write(dir, "synth.json", r#"{"run_id":"fx","synthetic":{"kind":"player_fixture","seed":9},"output_dir":"data"}"#);
    let o = groupseg(&["synth", "--config", "synth.json"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("wrote data/fx_manifest.json"));

    let o = groupseg(&["explain", "--quiet", "--config", "data/fx_config.json", "--output-dir", "out"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(dir.join("out/fx_explain_attribution_w0.json")).unwrap();
    let result = AttributionResult::from_json(&text).unwrap();
    for (phi, w) in result.phi.iter().zip(FIXTURE_WEIGHTS) {
        assert!((phi - w).abs() <= 1e-9, "{phi} vs {w}");
    }
    let csv = std::fs::read_to_string(dir.join("out/fx_explain_importance_w0.csv")).unwrap();
    assert_eq!(csv.lines().count(), 33);
}

#[test]
fn planted_blocks_grouping_is_recovered() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write(dir, "synth.json", r#"{"run_id":"pb","synthetic":{"kind":"planted_blocks","seed":4},"output_dir":"data"}"#);
    assert!(groupseg(&["synth", "--quiet", "--config", "synth.json"], dir).status.success());
    let weights = vec![vec![0.0; 6]; 100];
    let config = serde_json::json!({
        "run_id": "g",
        "dataset": {"manifest": "data/pb_manifest.json"},
        "predictor": {"kind": "linear", "weights": weights},
        "grouping": {"seed": 4},
        "segmentation": {"l_min": 10, "seed": 4},
        "attribution": {"M": 5, "seed": 4},
        "output_dir": "out"
    });
    write(dir, "run.json", &config.to_string());
    let o = groupseg(&["group", "--quiet", "--config", "run.json"], dir);
    assert!(o.status.success(), "{}", stderr(&o));

    let plant: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("data/pb_plant.json")).unwrap()).unwrap();
    let truth: Vec<Vec<usize>> = serde_json::from_value(plant["blocks"].clone()).unwrap();
    let g = Grouping::from_json(&std::fs::read_to_string(dir.join("out/g_grouping.json")).unwrap()).unwrap();
    assert_eq!(g.groups, truth);
    assert_eq!(g.variable_names, (0..6).map(|i| format!("x{i}")).collect::<Vec<_>>());
}

#[test]
fn validation_errors_exit_one_and_write_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write(dir, "synth.json", r#"{"run_id":"fx","synthetic":{"kind":"player_fixture","seed":1},"output_dir":"data"}"#);
    assert!(groupseg(&["synth", "--quiet", "--config", "synth.json"], dir).status.success());

    let missing = r#"{"run_id":"x","dataset":{"manifest":"data/fx_manifest.json"},"segmentation":{"l_min":8,"seed":1},"attribution":{"M":5,"seed":1}}"#;
    write(dir, "missing.json", missing);
    let o = groupseg(&["explain", "--config", "missing.json", "--output-dir", "out"], dir);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("ERROR 1:"), "{}", stderr(&o));
    assert!(stderr(&o).contains("predictor"));
    assert!(!dir.join("out").exists());

    // A bad target index is caught before anything runs.
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("data/fx_config.json")).unwrap()).unwrap();
    let mut bad = cfg.clone();
    bad["targets"] = serde_json::json!([5]);
    bad["dataset"]["manifest"] = serde_json::json!("data/fx_manifest.json");
    bad["players"]["player_set"] = serde_json::json!("data/fx_players.json");
    write(dir, "bad.json", &bad.to_string());
    let o = groupseg(&["explain", "--config", "bad.json", "--output-dir", "out"], dir);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("out of range"));
    assert!(!dir.join("out").exists());

    let o = groupseg(&["explain", "--config", "data/fx_config.json", "--preset", "har", "--output-dir", "out"], dir);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("T=96"));

    let o = groupseg(&["frobnicate"], dir);
    assert_eq!(o.status.code(), Some(1));
    let o = groupseg(&["--help"], dir);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn runtime_failures_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write(dir, "synth.json", r#"{"run_id":"fx","synthetic":{"kind":"player_fixture","seed":1},"output_dir":"data"}"#);
    assert!(groupseg(&["synth", "--quiet", "--config", "synth.json"], dir).status.success());
    let mut cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("data/fx_config.json")).unwrap()).unwrap();
    cfg["predictor"] = serde_json::json!({
        "kind": "external",
        "command": [env!("CARGO_BIN_EXE_echo-sum")],
        "env": {"ECHO_SUM_MODE": "malformed"}
    });
    cfg["dataset"]["manifest"] = serde_json::json!("data/fx_manifest.json");
    cfg["players"]["player_set"] = serde_json::json!("data/fx_players.json");
    write(dir, "ext.json", &cfg.to_string());
    let o = groupseg(&["explain", "--config", "ext.json", "--output-dir", "out"], dir);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("ERROR 2:"));
    assert!(!dir.join("out").exists());

    // A well-behaved child gives the same attribution as the built-in sum.
    cfg["predictor"]["env"] = serde_json::json!({});
    write(dir, "ext.json", &cfg.to_string());
    let o = groupseg(&["explain", "--quiet", "--config", "ext.json", "--output-dir", "out"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = AttributionResult::from_json(&std::fs::read_to_string(dir.join("out/fx_explain_attribution_w0.json")).unwrap())
        .unwrap();
    assert!(r.efficiency_gap() <= 1e-9);
}

#[test]
fn seed_override_changes_every_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write(dir, "synth.json", r#"{"run_id":"ms","synthetic":{"kind":"mean_shift","seed":1},"output_dir":"data"}"#);
    let run = |seed: &str, out: &str| {
        let o = groupseg(&["synth", "--quiet", "--config", "synth.json", "--seed-override", seed, "--output-dir", out], dir);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(dir.join(out).join("ms_window_000.csv")).unwrap()
    };
    assert_eq!(run("7", "a"), run("7", "b"));
    assert_ne!(run("7", "a"), run("8", "c"));
}
