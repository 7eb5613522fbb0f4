//! End-to-end checks of the command-line binary: exit codes, file outputs,
//! and the shape of what gets printed.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_argsearch"))
}

fn write_toy_model(dir: &Path) -> String {
    let model = serde_json::json!({
        "lexemes": ["the", "cat", "sat", "mat", "helpful"],
        "eos": null,
        "rows": [
            [0.05, 0.65, 0.05, 0.05, 0.20],
            [0.05, 0.05, 0.65, 0.05, 0.20],
            [0.05, 0.05, 0.05, 0.65, 0.20],
            [0.65, 0.05, 0.05, 0.05, 0.20],
            [0.65, 0.05, 0.05, 0.05, 0.20]
        ]
    });
    let path = dir.join("model.json");
    std::fs::write(&path, serde_json::to_string(&model).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn generate_prints_summary_json() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_toy_model(dir.path());
    let out = bin()
        .args([
            "generate",
            "--model",
            &model,
            "--rm-target",
            "helpful",
            "--rm-weight",
            "10",
            "--prompt",
            "the cat",
            "--method",
            "args-greedy",
            "--w",
            "2.0",
            "--k",
            "3",
            "--max-new-tokens",
            "6",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["prompt"], "the cat");
    assert!(summary["continuation"]
        .as_str()
        .unwrap()
        .contains("helpful"));
    assert_eq!(summary["counters"]["lm_calls"], 6);
    assert_eq!(summary["counters"]["reward_calls"], 18);
}

#[test]
fn generate_rejects_bad_config_with_usage_exit() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_toy_model(dir.path());
    let out = bin()
        .args([
            "generate", "--model", &model, "--rm-target", "helpful", "--prompt", "the", "--k", "0",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k must be"));
}

#[test]
fn generate_reports_missing_model_as_data_error() {
    let out = bin()
        .args([
            "generate",
            "--model",
            "/nonexistent/model.json",
            "--rm-target",
            "x",
            "--prompt",
            "the",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_reports_unreachable_provider() {
    let out = bin()
        .args([
            "generate",
            "--model",
            "tcp://127.0.0.1:1",
            "--rm-target",
            "x",
            "--prompt",
            "the",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bench_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_toy_model(dir.path());
    let prompts = dir.path().join("prompts.jsonl");
    std::fs::write(
        &prompts,
        "{\"prompt\": \"the cat\"}\n{\"prompt\": \"sat mat\"}\n",
    )
    .unwrap();
    let out_dir = dir.path().join("sweep");
    let out = bin()
        .args([
            "bench",
            "--model",
            &model,
            "--rm-target",
            "helpful",
            "--prompts",
            prompts.to_str().unwrap(),
            "--methods",
            "args-greedy,greedy",
            "--w-grid",
            "0,1.5",
            "--k-grid",
            "3",
            "--max-new-tokens",
            "5",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("summary.csv").is_file());
    let generations = out_dir.join("args-greedy_w1.5_k3").join("generations.jsonl");
    assert!(generations.is_file());

    let eval = bin()
        .args([
            "eval",
            "--model",
            &model,
            "--rm-target",
            "helpful",
            "--generations",
            generations.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(eval.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout(&eval)).unwrap();
    assert_eq!(report["n"], 2);
    assert!(report["diversity"].as_f64().unwrap() > 0.0);
}

#[test]
fn train_rm_writes_params_and_reports_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("pairs.jsonl");
    let mut lines = String::new();
    for i in 0..16 {
        lines.push_str(&format!(
            "{{\"prompt\": \"question {i}\", \"chosen\": \"a truly helpful answer {i}\", \"rejected\": \"a useless answer {i}\"}}\n"
        ));
    }
    std::fs::write(&pairs, lines).unwrap();
    let out_path = dir.path().join("params.json");
    let out = bin()
        .args([
            "train-rm",
            "--pairs",
            pairs.to_str().unwrap(),
            "--epochs",
            "150",
            "--width",
            "512",
            "--out",
            out_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let params: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(params["feature_spec"]["width"], 512);
    assert_eq!(params["theta"].as_array().unwrap().len(), 512);
}

#[test]
fn judge_prompt_emits_system_and_user() {
    let out = bin()
        .args([
            "judge-prompt",
            "--question",
            "What is a mat?",
            "--answer-a",
            "A small rug.",
            "--answer-b",
            "No idea.",
            "--order-seed",
            "1",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(v["system"]
        .as_str()
        .unwrap()
        .starts_with("You are a helpful, harmless, and precise assistant"));
    // order_seed 1 swaps presentation: answer B shows up first.
    let user = v["user"].as_str().unwrap();
    assert!(user.find("No idea.").unwrap() < user.find("A small rug.").unwrap());
    assert_eq!(v["order_swapped"], true);
}
