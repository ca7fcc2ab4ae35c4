//! Integration tests for the `drag` binary: subcommands, config precedence,
//! offline enforcement, and fail-fast credential checks.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bundle_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/worked/eval.toml")
}

fn drag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drag"))
        .args(args)
        .env_remove("DRAG_TEACHER_API_KEY")
        .env_remove("DRAG_STUDENT_API_KEY")
        .env_remove("DRAG_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn path_arg(path: &Path) -> String {
    path.display().to_string()
}

#[test]
fn eval_subcommand_runs_the_shipped_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cache = dir.path().join("cache");
    let config = bundle_config();

    let output = drag(&[
        "eval",
        "--config",
        &path_arg(&config),
        "--out",
        &path_arg(&out),
        "--cache-dir",
        &path_arg(&cache),
    ]);
    assert!(output.status.success(), "{output:?}");

    let summary: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(summary["command"], "eval");
    assert_eq!(summary["failed_outcomes"], 0);

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["cells"][0]["accuracy"], 1.0);
    assert_eq!(report["dataset_size"], 4);
    assert!(out.join("report.md").exists());

    let answers = std::fs::read_to_string(out.join("answers.jsonl")).unwrap();
    // 4 questions x (baseline + one cell).
    assert_eq!(answers.lines().count(), 8);

    // Second run over the same cache: byte-identical report.
    let out2 = dir.path().join("out2");
    let rerun = drag(&[
        "eval",
        "--config",
        &path_arg(&config),
        "--out",
        &path_arg(&out2),
        "--cache-dir",
        &path_arg(&cache),
    ]);
    assert!(rerun.status.success());
    assert_eq!(
        std::fs::read(out.join("report.json")).unwrap(),
        std::fs::read(out2.join("report.json")).unwrap()
    );
}

#[test]
fn generate_then_graph_produces_graph_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cache = dir.path().join("cache");
    let config = bundle_config();
    let common = [
        "--config".to_string(),
        path_arg(&config),
        "--out".to_string(),
        path_arg(&out),
        "--cache-dir".to_string(),
        path_arg(&cache),
    ];
    let common: Vec<&str> = common.iter().map(String::as_str).collect();

    let generate = drag(&[&["generate"], common.as_slice()].concat());
    assert!(generate.status.success(), "{generate:?}");
    let evidence_files: Vec<_> = std::fs::read_dir(out.join("evidence")).unwrap().collect();
    assert_eq!(evidence_files.len(), 4);

    // Rerun is served from the cache and rewrites identical bytes.
    let insect = out.join("evidence/insect-metamorphosis.json");
    let before = std::fs::read(&insect).unwrap();
    let regenerate = drag(&[&["generate"], common.as_slice()].concat());
    assert!(regenerate.status.success());
    assert_eq!(before, std::fs::read(&insect).unwrap());

    let graph = drag(&[&["graph"], common.as_slice()].concat());
    assert!(graph.status.success(), "{graph:?}");

    let simple: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("graph/insect-metamorphosis.simplegraph.json")).unwrap(),
    )
    .unwrap();
    let edges = simple["edges"].as_array().unwrap();
    let mut pairs = std::collections::BTreeSet::new();
    for edge in edges {
        let head = edge["head"].as_str().unwrap().to_lowercase();
        let tail = edge["tail"].as_str().unwrap().to_lowercase();
        let pair = if head <= tail {
            (head, tail)
        } else {
            (tail, head)
        };
        assert!(pairs.insert(pair), "duplicate pair in simple graph");
    }
    assert!(out
        .join("graph/insect-metamorphosis.multigraph.json")
        .exists());
}

#[test]
fn privacy_bench_is_regenerable() {
    let dir = tempfile::tempdir().unwrap();
    let config = bundle_config();

    let run = |out: &Path, cache: &Path| -> Output {
        drag(&[
            "privacy-bench",
            "--config",
            &path_arg(&config),
            "--out",
            &path_arg(out),
            "--cache-dir",
            &path_arg(cache),
        ])
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let first = run(&out_a, &dir.path().join("cache-a"));
    assert!(first.status.success(), "{first:?}");
    let second = run(&out_b, &dir.path().join("cache-b"));
    assert!(second.status.success());

    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_a.join("privacy_metrics.json")).unwrap())
            .unwrap();
    assert_eq!(metrics["reduction_rate"], 1.0);
    assert!(metrics["total_injected"].as_u64().unwrap() >= 4);

    let rows = std::fs::read_to_string(out_a.join("privacy_bench.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 4);

    // Seed fixed: regenerated files are byte-identical.
    assert_eq!(
        std::fs::read(out_a.join("privacy_bench.jsonl")).unwrap(),
        std::fs::read(out_b.join("privacy_bench.jsonl")).unwrap()
    );
}

#[test]
fn mode_and_k_sweep_produces_all_cells() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("tiny.jsonl");
    std::fs::write(
        &dataset,
        r#"{"id":"t1","question":"What is water?","choices":[{"label":"a","text":"H2O"},{"label":"b","text":"CO2"}],"answer":"a"}
"#,
    )
    .unwrap();
    let out = dir.path().join("out");

    // Default providers are procedural, so this runs with no config file.
    let output = drag(&[
        "eval",
        "--dataset",
        &path_arg(&dataset),
        "--mode",
        "evidence,graph",
        "--k",
        "2,3",
        "--n",
        "4",
        "--offline",
        "--out",
        &path_arg(&out),
        "--cache-dir",
        &path_arg(&dir.path().join("cache")),
    ]);
    assert!(output.status.success(), "{output:?}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let cells = report["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 4);
    let labels: Vec<String> = cells
        .iter()
        .map(|cell| format!("{} {}", cell["mode"].as_str().unwrap(), cell["k"]))
        .collect();
    assert_eq!(labels, ["evidence 2", "evidence 3", "graph 2", "graph 3"]);
}

#[test]
fn missing_api_key_fails_before_any_call() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("online.toml");
    std::fs::write(
        &config_path,
        r#"dataset = "nonexistent.jsonl"

[providers.teacher]
kind = "http"
endpoint = "https://unreachable.invalid/v1/chat"
"#,
    )
    .unwrap();
    let output = drag(&["eval", "--config", &path_arg(&config_path)]);
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("DRAG_TEACHER_API_KEY"), "{stderr}");
}

#[test]
fn offline_flag_forbids_network_providers() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("online.toml");
    std::fs::write(
        &config_path,
        r#"[providers.teacher]
kind = "http"
endpoint = "https://unreachable.invalid/v1/chat"
"#,
    )
    .unwrap();
    let output = drag(&["eval", "--config", &path_arg(&config_path), "--offline"]);
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("offline"), "{stderr}");
}

#[test]
fn unknown_mode_is_rejected() {
    let output = drag(&["eval", "--mode", "telepathy"]);
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("unknown context mode"), "{stderr}");
}
