use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn thoughtsearch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thoughtsearch"))
        .args(args)
        .env_remove("OPENAI_API_KEY")
        .output()
        .expect("binary runs")
}

fn toy_args(out: &Path) -> Vec<String> {
    vec![
        "--dataset".into(),
        fixtures().join("toy_problems.jsonl").display().to_string(),
        "--format".into(),
        "generic_jsonl".into(),
        "--backend".into(),
        "replay".into(),
        "--fixtures".into(),
        fixtures().join("toy_replay.json").display().to_string(),
        "--trace-fixture".into(),
        fixtures().join("trace_sum.json").display().to_string(),
        "--rollouts".into(),
        "4".into(),
        "--out".into(),
        out.display().to_string(),
    ]
}

fn run_ok(args: &[String]) -> Vec<Value> {
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let output = thoughtsearch(&args);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let out = args[args.iter().position(|a| *a == "--out").unwrap() + 1];
    std::fs::read_to_string(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn prompt_classes(out: &Path) -> Vec<String> {
    let log = out.with_file_name(format!("{}.prompts.jsonl", out.file_name().unwrap().to_string_lossy()));
    std::fs::read_to_string(log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["class"].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn replay_run_writes_results_metrics_and_prompt_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results.jsonl");
    let records = run_ok(&toy_args(&out));
    assert_eq!(records.len(), 4);
    assert!(records[..3].iter().all(|r| r["record"] == "result"));
    assert_eq!(records[3]["record"], "metrics");
    let rev = records.iter().find(|r| r["problem_id"] == "rev").unwrap();
    assert_eq!(rev["private_fraction"], 1.0);
    assert!(rev["rethinks_used"].as_u64().unwrap() >= 1);
    assert!(prompt_classes(&out).iter().any(|c| c == "regenerate_thought"));
}

#[test]
fn no_rethink_means_zero_rethinks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results.jsonl");
    let mut args = toy_args(&out);
    args.push("--no-rethink".into());
    let records = run_ok(&args);
    for r in records.iter().filter(|r| r["record"] == "result") {
        assert_eq!(r["rethinks_used"], 0, "{r}");
    }
    assert!(!prompt_classes(&out).iter().any(|c| c == "regenerate_thought"));
}

#[test]
fn disabled_flags_silence_their_prompts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results.jsonl");
    let mut args = toy_args(&out);
    args.extend(["--no-self-eval".into(), "--no-block-info".into()]);
    run_ok(&args);
    let classes = prompt_classes(&out);
    assert!(!classes.iter().any(|c| c == "self_evaluate" || c == "analyze_blocks"));
}

#[test]
fn code_granularity_trees_stay_shallow() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results.jsonl");
    let dataset = fixtures().join("toy_problems.jsonl").display().to_string();
    let args: Vec<String> =
        ["--dataset", &dataset, "--backend", "mock", "--granularity", "code", "--rollouts", "5", "--out"]
            .iter()
            .map(|s| s.to_string())
            .chain([out.display().to_string()])
            .collect();
    let records = run_ok(&args);
    for r in records.iter().filter(|r| r["record"] == "result") {
        let dump: Value =
            serde_json::from_str(&std::fs::read_to_string(r["tree_dump_path"].as_str().unwrap()).unwrap()).unwrap();
        let nodes = dump["tree"]["nodes"].as_array().unwrap();
        assert!(nodes.len() > 1);
        assert!(nodes.iter().all(|n| n["depth"].as_u64().unwrap() <= 1));
    }
}

#[test]
fn limit_takes_first_problems() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results.jsonl");
    let mut args = toy_args(&out);
    args.extend(["--limit".into(), "1".into()]);
    let records = run_ok(&args);
    assert_eq!(records.len(), 2);
    assert_eq!(records[0]["problem_id"], "add");
}

#[test]
fn unwritable_output_fails() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let out = blocker.join("results.jsonl");
    let args = toy_args(&out);
    let output = thoughtsearch(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(!output.status.success());
}

#[test]
fn http_backend_needs_env_credential() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = fixtures().join("toy_problems.jsonl").display().to_string();
    let out = dir.path().join("r.jsonl").display().to_string();
    let output = thoughtsearch(&["--dataset", &dataset, "--backend", "http", "--out", &out]);
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("OPENAI_API_KEY"));

    let output = thoughtsearch(&["--dataset", &dataset, "--api-key", "sk-x", "--out", &out]);
    assert!(!output.status.success());
}

#[test]
fn bad_config_and_missing_fixtures_fail() {
    let dataset = fixtures().join("toy_problems.jsonl").display().to_string();
    assert!(!thoughtsearch(&["--dataset", &dataset, "--w-test", "0.9", "--w-llm", "0.9"]).status.success());
    assert!(!thoughtsearch(&["--dataset", &dataset, "--backend", "replay"]).status.success());
    assert!(!thoughtsearch(&["--dataset", &dataset, "--format", "csv"]).status.success());
}
