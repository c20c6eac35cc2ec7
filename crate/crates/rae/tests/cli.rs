//! End-to-end checks of the `rae` binary: exit codes, artifacts and
//! output format, driven against a small bundled corpus.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rae")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// A complete config over the bundled corpus, sized to train in
/// moments.
fn smoke_config(out_dir: &Path) -> String {
    format!(
        r#"
seed = 7
out_dir = "{out}"

[data]
positive = "{pos}"
negative = "{neg}"

[train]
h = 4
max_iterations = 8

[ablation]
modes = ["extract-cut", "window"]
thresholds = [1, 3, "inf"]

[analysis]
n_per_category = 2
export_trees = 3
"#,
        out = out_dir.display(),
        pos = fixture("tiny.pos").display(),
        neg = fixture("tiny.neg").display(),
    )
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout_of(&out).contains("Usage"));
}

#[test]
fn version_exits_zero() {
    let out = run(&["--version"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = run(&["--no-such-flag", "prepare"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_config_flag_is_config_error() {
    let out = run(&["prepare"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("--config"));
}

#[test]
fn missing_config_file_is_data_error() {
    let out = run(&["--config", "/definitely/not/here.toml", "prepare"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        format!(
            "typo_field = 1\n[data]\npositive = \"{}\"\nnegative = \"{}\"\n",
            fixture("tiny.pos").display(),
            fixture("tiny.neg").display()
        ),
    )
    .unwrap();
    let out = run(&["--config", config.to_str().unwrap(), "prepare"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_data_file_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        format!(
            "[data]\npositive = \"{}\"\nnegative = \"{}/nope.neg\"\n",
            fixture("tiny.pos").display(),
            dir.path().display()
        ),
    )
    .unwrap();
    let out = run(&["--config", config.to_str().unwrap(), "prepare"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("does not exist"));
}

#[test]
fn ablate_without_checkpoint_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let config = dir.path().join("run.toml");
    fs::write(&config, smoke_config(&out_dir)).unwrap();
    let out = run(&["--config", config.to_str().unwrap(), "ablate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn grad_check_reports_pass() {
    let out = run(&["grad-check", "--instances", "2", "--seed", "11"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("grad-check: PASS"), "stdout: {text}");
    assert!(text.contains("instance 0:"));
    assert!(text.contains("instance 1:"));
}

#[test]
fn grad_check_zero_instances_is_usage_error() {
    let out = run(&["grad-check", "--instances", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let config_path = dir.path().join("run.toml");
    fs::write(&config_path, smoke_config(&out_dir)).unwrap();
    let config = config_path.to_str().unwrap();

    let out = run(&["--config", config, "prepare"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(
        text.contains("sentences: 48 (positive 24, negative 24)"),
        "stdout: {text}"
    );
    for f in [
        "train.jsonl",
        "test.jsonl",
        "vocab.json",
        "prepare.json",
        "manifest-prepare.json",
    ] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }

    let out = run(&["--config", config, "train"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    assert!(out_dir.join("checkpoint.json").is_file());
    let log = fs::read_to_string(out_dir.join("train_log.jsonl")).unwrap();
    assert!(!log.trim().is_empty());
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("total").and_then(|t| t.as_f64()).is_some());
    }

    let out = run(&["--config", config, "ablate"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let tsv = fs::read_to_string(out_dir.join("ablation.tsv")).unwrap();
    let mut lines = tsv.lines();
    assert_eq!(lines.next(), Some("mode\t1\t3\tinf"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("extract-cut\t"));
    assert!(rows[1].starts_with("window\t"));
    for row in rows {
        for cell in row.split('\t').skip(1) {
            let pct: f64 = cell.parse().expect("numeric accuracy");
            assert!((0.0..=100.0).contains(&pct));
        }
    }

    let out = run(&["--config", config, "analyze"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    assert!(out_dir.join("analysis.json").is_file());
    assert!(out_dir.join("reverser_records.jsonl").is_file());
    let analysis: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("analysis.json")).unwrap()).unwrap();
    assert_eq!(analysis["trees"].as_u64(), Some(48));
    assert!(analysis["reverser_occurrences"].as_u64().unwrap() > 0);
    assert!(analysis["period_occurrences"].as_u64().unwrap() > 0);

    let out = run(&["--config", config, "export-trees"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let dot = fs::read_to_string(out_dir.join("trees/tree_00000.dot")).unwrap();
    assert!(dot.starts_with("digraph"));
    let trees = fs::read_to_string(out_dir.join("trees.jsonl")).unwrap();
    assert_eq!(trees.lines().count(), 3);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let config_path = dir.path().join("run.toml");
    fs::write(&config_path, smoke_config(&out_dir)).unwrap();
    let config = config_path.to_str().unwrap();

    let out = run(&["--config", config, "--seed", "99", "prepare"]);
    assert_eq!(out.status.code(), Some(0));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest-prepare.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["config"]["seed"].as_u64(), Some(99));
    assert_eq!(manifest["config"]["split_seed"].as_u64(), Some(99));
    assert_eq!(manifest["config"]["model_seed"].as_u64(), Some(100));
    assert_eq!(manifest["config"]["train"]["seed"].as_u64(), Some(100));
    assert_eq!(manifest["config"]["sampler_seed"].as_u64(), Some(101));
}
