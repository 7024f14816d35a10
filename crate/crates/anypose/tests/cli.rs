//! End-to-end tests of the command-line interface: every subcommand runs as
//! a real process against real files.

use std::path::Path;
use std::process::{Command, Output};

fn anypose(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anypose"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    entries
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn gen_tiny_data(dir: &Path, out_name: &str) {
    let out = anypose(
        &[
            "gen-data",
            "--m-joints",
            "3",
            "--n",
            "4",
            "--seed",
            "11",
            "--duration",
            "1.2",
            "--out",
            out_name,
        ],
        dir,
    );
    assert_success(&out);
}

const TINY_TRAIN_CONFIG: &str = r#"{
  "train": {
    "epochs": 3,
    "batch_size": 2,
    "hidden_widths": [8],
    "solver_step_sec": 0.02,
    "loss_time_grid_sec": [0.08, 0.2]
  }
}"#;

#[test]
fn gen_data_writes_files_and_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    gen_tiny_data(tmp.path(), "a");
    gen_tiny_data(tmp.path(), "b");

    let a = read_dir_bytes(&tmp.path().join("a"));
    let b = read_dir_bytes(&tmp.path().join("b"));
    assert_eq!(a.len(), 5); // 4 sequences + manifest
    assert_eq!(a, b);
    assert!(tmp.path().join("a/manifest.json").exists());
}

#[test]
fn gen_data_rejects_too_few_sequences() {
    let tmp = tempfile::tempdir().unwrap();
    let out = anypose(&["gen-data", "--n", "2", "--out", "d"], tmp.path());
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error:"), "stderr: {stderr}");
}

#[test]
fn train_writes_checkpoint_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    gen_tiny_data(tmp.path(), "data");
    std::fs::write(tmp.path().join("cfg.json"), TINY_TRAIN_CONFIG).unwrap();

    let out = anypose(
        &[
            "train",
            "--data",
            "data",
            "--order",
            "1",
            "--config",
            "cfg.json",
            "--epochs",
            "2",
            "--out",
            "ck.json",
            "--report",
            "report.json",
        ],
        tmp.path(),
    );
    assert_success(&out);
    assert!(tmp.path().join("ck.json").exists());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("report.json")).unwrap())
            .unwrap();
    // The flag overrides the config file's epoch count.
    assert_eq!(report["epochs_completed"], 2);
    assert_eq!(report["config"]["epochs"], 2);
    assert_eq!(report["config"]["hidden_widths"][0], 8);
    assert_eq!(report["train_mpjpe_mm"].as_array().unwrap().len(), 2);
}

#[test]
fn train_zero_lr_has_flat_loss_curve() {
    let tmp = tempfile::tempdir().unwrap();
    gen_tiny_data(tmp.path(), "data");
    std::fs::write(tmp.path().join("cfg.json"), TINY_TRAIN_CONFIG).unwrap();

    let out = anypose(
        &[
            "train",
            "--data",
            "data",
            "--order",
            "1",
            "--config",
            "cfg.json",
            "--lr",
            "0",
            "--out",
            "ck.json",
            "--report",
            "report.json",
        ],
        tmp.path(),
    );
    assert_success(&out);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("report.json")).unwrap())
            .unwrap();
    let losses = report["train_mpjpe_mm"].as_array().unwrap();
    assert!(losses.windows(2).all(|w| w[0] == w[1]), "losses: {losses:?}");
}

#[test]
fn train_order2_without_enough_history_fails() {
    let tmp = tempfile::tempdir().unwrap();
    gen_tiny_data(tmp.path(), "data");
    // Window origin at index 0 leaves no previous pose for the velocity.
    std::fs::write(
        tmp.path().join("cfg.json"),
        r#"{ "train": { "epochs": 1, "hidden_widths": [4], "loss_time_grid_sec": [0.08], "window_start_idx": 0 } }"#,
    )
    .unwrap();
    let out = anypose(
        &[
            "train",
            "--data",
            "data",
            "--order",
            "2",
            "--config",
            "cfg.json",
            "--out",
            "ck.json",
        ],
        tmp.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

fn train_tiny_checkpoint(tmp: &Path) {
    gen_tiny_data(tmp, "data");
    std::fs::write(tmp.join("cfg.json"), TINY_TRAIN_CONFIG).unwrap();
    let out = anypose(
        &[
            "train",
            "--data",
            "data",
            "--order",
            "2",
            "--config",
            "cfg.json",
            "--out",
            "ck.json",
        ],
        tmp,
    );
    assert_success(&out);
}

#[test]
fn forecast_at_arbitrary_times_to_stdout_and_file() {
    let tmp = tempfile::tempdir().unwrap();
    train_tiny_checkpoint(tmp.path());

    // Off-grid query time succeeds and yields exactly one pose row.
    let out = anypose(
        &[
            "forecast",
            "--model",
            "ck.json",
            "--observed",
            "data/seq_000.csv",
            "--at",
            "0.137",
        ],
        tmp.path(),
    );
    assert_success(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 2, "stdout: {stdout}");
    assert!(lines[0].starts_with("# m_joints=3"));
    assert_eq!(lines[1].split(',').count(), 1 + 9);

    let out = anypose(
        &[
            "forecast",
            "--model",
            "ck.json",
            "--observed",
            "data/seq_000.csv",
            "--at",
            "0.93,0.137,0.5",
            "--out",
            "fc.csv",
        ],
        tmp.path(),
    );
    assert_success(&out);
    let text = std::fs::read_to_string(tmp.path().join("fc.csv")).unwrap();
    assert_eq!(text.lines().count(), 4); // header + 3 sorted query rows
}

#[test]
fn forecast_rejects_non_positive_times() {
    let tmp = tempfile::tempdir().unwrap();
    train_tiny_checkpoint(tmp.path());
    let out = anypose(
        &[
            "forecast",
            "--model",
            "ck.json",
            "--observed",
            "data/seq_000.csv",
            "--at",
            "-0.1",
        ],
        tmp.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn eval_emits_eight_horizon_table() {
    let tmp = tempfile::tempdir().unwrap();
    train_tiny_checkpoint(tmp.path());
    let out = anypose(
        &[
            "eval",
            "--model",
            "ck.json",
            "--data",
            "data",
            "--out",
            "eval.json",
        ],
        tmp.path(),
    );
    assert_success(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("1000"), "stdout: {stdout}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("eval.json")).unwrap())
            .unwrap();
    assert_eq!(report["model"]["mpjpe_mm"].as_array().unwrap().len(), 8);
    assert_eq!(
        report["zero_velocity_baseline"]["mpjpe_mm"]
            .as_array()
            .unwrap()
            .len(),
        8
    );
}

#[test]
fn bench_emits_mean_and_variance_per_strategy() {
    let tmp = tempfile::tempdir().unwrap();
    train_tiny_checkpoint(tmp.path());
    let out = anypose(
        &[
            "bench",
            "--model",
            "ck.json",
            "--observed",
            "data/seq_000.csv",
            "--n-queries",
            "20",
            "--warmup",
            "2",
            "--out",
            "bench.json",
        ],
        tmp.path(),
    );
    assert_success(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("anytime_ode"));
    assert!(stdout.contains("dense_interpolate"));
    assert!(stdout.contains("mean time cost"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("bench.json")).unwrap())
            .unwrap();
    let strategies = report["strategies"].as_array().unwrap();
    assert_eq!(strategies.len(), 3);
    for s in strategies {
        assert!(s["mean_latency_sec"].as_f64().unwrap() > 0.0);
        assert!(s["variance_sec2"].as_f64().unwrap() >= 0.0);
        assert_eq!(s["n_queries"], 20);
    }
}

#[test]
fn unknown_subcommand_prints_usage_and_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = anypose(&["frobnicate"], tmp.path());
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.to_lowercase().contains("usage"), "stderr: {stderr}");
}
