use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"
platform = "msd"
seed = 3

[collect]
n_trajectories = 12
steps = 30

[phase1]
horizons = [1, 2]
epochs_per_stage = 2
batch_size = 64
val_every = 4

[phase1.model]
latent_dim = 2
state_hidden = [8]
encoder_hidden = [8]

[phase2]
epochs = 2
batch_size = 32
val_every = 4

[phase2.adaptive]
history_len = 3

[phase2.adaptive.arch]
arch = "mlp"
hidden = [8]

[episode]
steps = 20

[episode.mppi]
horizon = 5
n_samples = 32

[control]
runs = 2

[online]
episodes = 2
update_period = 5
batch_size = 8
gradient_steps = 2

[analyze]
max_horizon = 5
lipschitz_pairs = 50

[analyze.test_collect]
platform = "msd"
n_trajectories = 3
steps = 20
"#;

fn adnode(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_adnode"))
        .args(args)
        .arg("--config")
        .arg(dir.join("tiny.toml"))
        .arg("--out")
        .arg(dir.join("run"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "adnode {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn trained() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    for cmd in ["collect", "train-phase1", "train-phase2"] {
        adnode(dir.path(), &[cmd]);
    }
    dir
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn pipeline_writes_every_artifact() {
    let dir = trained();
    let run = dir.path().join("run");
    for f in ["dataset.bin", "phase1.ckpt", "phase2.ckpt", "phase1_curve.csv", "phase2_curve.csv", "config.resolved.toml", "run.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let meta = json(&run.join("run.json"));
    assert_eq!(meta["command"], "train-phase2");
    assert_eq!(meta["seed"], 3);
    assert!(meta["checkpoint_version"].is_u64() && meta["dataset_version"].is_u64());
    let resolved = std::fs::read_to_string(run.join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("epochs_per_stage = 2"));
}

#[test]
fn fixed_node_adapts_once_and_phase2_every_step() {
    let dir = trained();
    adnode(dir.path(), &["control", "--mode", "fixed-node", "--mode", "adnode-phase2"]);
    let summary = json(&dir.path().join("run/control_summary.json"));
    let modes = summary.as_array().unwrap();
    assert_eq!(modes.len(), 2);
    for ep in modes[0]["episodes"].as_array().unwrap() {
        assert_eq!(ep["mode"], "fixed-node");
        assert_eq!(ep["adapt_calls"], 1);
    }
    for ep in modes[1]["episodes"].as_array().unwrap() {
        // 20 steps, 3 of them warm start.
        assert_eq!(ep["adapt_calls"], 17);
    }
    assert!(dir.path().join("run/episodes/fixed-node_000.csv").exists());
}

#[test]
fn deterministic_summaries_are_byte_identical() {
    let dir = trained();
    let mut runs = Vec::new();
    for _ in 0..2 {
        adnode(dir.path(), &["control", "--deterministic"]);
        runs.push(std::fs::read(dir.path().join("run/control_summary.json")).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
    assert!(!String::from_utf8_lossy(&runs[0]).contains("runtime_s"));
    adnode(dir.path(), &["control"]);
    let timed = std::fs::read_to_string(dir.path().join("run/control_summary.json")).unwrap();
    assert!(timed.contains("runtime_s"));
}

#[test]
fn oracle_analysis_has_zero_error_and_model_analysis_reports_bounds() {
    let dir = trained();
    adnode(dir.path(), &["analyze", "--oracle"]);
    let csv = std::fs::read_to_string(dir.path().join("run/error_curve_oracle.csv")).unwrap();
    let mut lines = csv.lines();
    lines.next();
    for line in lines {
        let cols: Vec<f64> = line.split(',').filter(|c| !c.is_empty()).map(|c| c.parse().unwrap()).collect();
        assert!(cols[1..3].iter().all(|v| *v == 0.0), "{line}");
    }
    adnode(dir.path(), &["analyze"]);
    let report = json(&dir.path().join("run/analysis.json"));
    let bound = report["bound"]["bound"].as_array().unwrap();
    assert_eq!(bound.len(), 5);
    assert!(report["bound"]["lipschitz"]["l"].as_f64().unwrap() > 0.0);
    assert!(report["adaptive"]["position"].as_array().unwrap().len() == 5);
}

#[test]
fn online_learning_writes_an_updated_checkpoint() {
    let dir = trained();
    adnode(dir.path(), &["online", "--deterministic"]);
    let summary = json(&dir.path().join("run/online_summary.json"));
    assert!(summary["updates"].as_u64().unwrap() > 0);
    assert_eq!(summary["episodes"].as_array().unwrap().len(), 2);
    assert!(dir.path().join("run/online.ckpt").exists());
}

#[test]
fn bad_inputs_fail_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "platform = \"msd\"\n[simulator]\nplatform = \"quad\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_adnode"))
        .args(["collect", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("platform"));

    let out = Command::new(env!("CARGO_BIN_EXE_adnode"))
        .args(["control", "--mode", "bogus"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("fixed-node"));
}
