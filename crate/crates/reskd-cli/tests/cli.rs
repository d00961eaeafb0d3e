//! End-to-end checks of the command-line surface: flags, file outputs,
//! determinism, and exit codes (0 ok, 2 usage/config, 3 stage cap, 4 I/O).

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn reskd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_reskd"))
}

fn run(args: &[&str]) -> Output {
    reskd().args(args).output().expect("binary runs")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// A config small enough to train in well under a second.
fn tiny_config_json(seed: u64, max_stages: usize) -> String {
    format!(
        r#"{{
  "tau_s0": 0.5, "tau_res": 1.0, "temperature": 1.0,
  "loss_kind": "l2logit", "ce_target_mode": "combined",
  "epochs": 30, "batch_size": 16, "lr": 0.05,
  "lr_decay_epochs": [20], "lr_decay_factor": 0.1,
  "momentum": 0.9, "weight_decay": 0.001,
  "energy_fraction": 0.9, "th_scale": 0.9, "max_stages": {max_stages},
  "val_fraction": 0.2, "seed": {seed},
  "teacher_widths": [12], "s0_widths": [3], "res_widths": [[3], [3], [3]]
}}"#
    )
}

fn write_tiny_run(dir: &Path, seed: u64, max_stages: usize) -> (String, String, String) {
    let data = dir.join("data.csv");
    let cfg = dir.join("cfg.json");
    let art = dir.join("artifact");
    let out = run(&[
        "gen-data",
        "--kind",
        "blobs",
        "--seed",
        "5",
        "--n-per-class",
        "60",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    fs::write(&cfg, tiny_config_json(seed, max_stages)).unwrap();
    (
        data.to_str().unwrap().to_string(),
        cfg.to_str().unwrap().to_string(),
        art.to_str().unwrap().to_string(),
    )
}

#[test]
fn gen_data_is_deterministic_and_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = run(&[
            "gen-data",
            "--kind",
            "spirals",
            "--seed",
            "7",
            "--n-per-class",
            "40",
            "--turns",
            "1.0",
            "--noise",
            "0.1",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_exit(&out, 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let parsed = reskd::data::read_dataset_csv(&a).unwrap();
    assert_eq!(parsed.len(), 80);
    assert_eq!(parsed.k, 2);
}

#[test]
fn gen_data_invalid_kind_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "gen-data",
        "--kind",
        "moons",
        "--seed",
        "1",
        "--out",
        dir.path().join("x.csv").to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
}

#[test]
fn distill_writes_bundle_and_reruns_bitwise_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg, art) = write_tiny_run(dir.path(), 3, 1);
    let art2 = dir.path().join("artifact2");
    let out = run(&["distill", "--config", &cfg, "--data", &data, "--out", &art]);
    assert!(
        matches!(out.status.code(), Some(0) | Some(3)),
        "unexpected exit {:?}",
        out.status.code()
    );
    let out2 = run(&[
        "distill",
        "--config",
        &cfg,
        "--data",
        &data,
        "--out",
        art2.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), out2.status.code());

    // max_stages = 1: exactly res_1.json, no res_2.json.
    let art_path = Path::new(&art);
    assert!(art_path.join("res_1.json").exists());
    assert!(!art_path.join("res_2.json").exists());
    for name in ["config.json", "teacher.json", "s0.json", "res_1.json", "meta.json", "metrics.csv"] {
        let x = fs::read(art_path.join(name)).unwrap();
        let y = fs::read(art2.join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between identical runs");
    }
}

#[test]
fn distill_bad_config_enumerates_all_violations() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg, art) = write_tiny_run(dir.path(), 3, 1);
    let bad = fs::read_to_string(&cfg)
        .unwrap()
        .replace("\"tau_s0\": 0.5", "\"tau_s0\": 7.0")
        .replace("\"lr\": 0.05", "\"lr\": -1.0");
    fs::write(&cfg, bad).unwrap();
    let out = run(&["distill", "--config", &cfg, "--data", &data, "--out", &art]);
    assert_exit(&out, 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("tau_s0"), "{stderr}");
    assert!(stderr.contains("lr"), "{stderr}");
}

#[test]
fn distill_missing_data_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg, art) = write_tiny_run(dir.path(), 3, 1);
    let out = run(&[
        "distill",
        "--config",
        &cfg,
        "--data",
        dir.path().join("nope.csv").to_str().unwrap(),
        "--out",
        &art,
    ]);
    assert_exit(&out, 4);
}

#[test]
fn distill_stage_cap_exit_code_still_writes_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("hard.csv");
    // Overlapping blobs plus one-unit students against a [16]-unit teacher
    // at the full energy fraction: the criterion stays out of reach.
    let blobs = reskd::data::gen_blobs(13, 30, 2, 2, 1.5).unwrap();
    reskd::data::write_dataset_csv(&blobs, &data).unwrap();
    let cfg = dir.path().join("cfg.json");
    let text = r#"{
  "tau_s0": 0.9, "tau_res": 0.9, "temperature": 1.0,
  "loss_kind": "l2logit", "ce_target_mode": "combined",
  "epochs": 40, "batch_size": 16, "lr": 0.3,
  "lr_decay_epochs": [30], "lr_decay_factor": 0.1,
  "momentum": 0.9, "weight_decay": 0.0001,
  "energy_fraction": 1.0, "th_scale": 0.9, "max_stages": 2,
  "val_fraction": 0.2, "seed": 7,
  "teacher_widths": [16], "s0_widths": [1], "res_widths": [[1], [1]]
}"#;
    fs::write(&cfg, text).unwrap();
    let art = dir.path().join("capped");
    let out = run(&[
        "distill", "--config", cfg.to_str().unwrap(), "--data", data.to_str().unwrap(),
        "--out", art.to_str().unwrap(),
    ]);
    assert_exit(&out, 3);
    assert!(art.join("res_2.json").exists());
}

#[test]
fn infer_threshold_zero_truncates_everything() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg, art) = write_tiny_run(dir.path(), 3, 1);
    run(&["distill", "--config", &cfg, "--data", &data, "--out", &art]);
    let preds = dir.path().join("preds.csv");
    let out = run(&[
        "infer", "--artifact", &art, "--data", &data, "--adaptive", "--th", "0", "--out",
        preds.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("preds.report.json")).unwrap())
            .unwrap();
    assert_eq!(report["mean_evaluated_stages"], 0.0);
    assert_eq!(report["skip_fraction"][0], 1.0);
    let text = fs::read_to_string(&preds).unwrap();
    assert!(text.lines().count() > 1);
    assert!(text.lines().skip(1).all(|l| l.split(',').nth(1) == Some("0")));
}

#[test]
fn infer_non_adaptive_equals_unreachable_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg, art) = write_tiny_run(dir.path(), 3, 1);
    run(&["distill", "--config", &cfg, "--data", &data, "--out", &art]);
    let full = dir.path().join("full.csv");
    let unreachable = dir.path().join("unreachable.csv");
    let out = run(&["infer", "--artifact", &art, "--data", &data, "--out", full.to_str().unwrap()]);
    assert_exit(&out, 0);
    let out = run(&[
        "infer", "--artifact", &art, "--data", &data, "--adaptive", "--th", "99", "--out",
        unreachable.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    assert_eq!(fs::read(&full).unwrap(), fs::read(&unreachable).unwrap());
}

#[test]
fn analyze_gi_report_identities_and_stage0_matches_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg, art) = write_tiny_run(dir.path(), 3, 2);
    run(&["distill", "--config", &cfg, "--data", &data, "--out", &art]);
    let report_path = dir.path().join("gi.json");
    let out = run(&[
        "analyze-gi", "--artifact", &art, "--data", &data, "--out",
        report_path.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(report["telescoping_residual"].as_f64().unwrap() < 1e-12);
    let stages = report["stages"].as_array().unwrap();
    for s in &stages[1..] {
        assert!(!s["k_factor"].is_null() || s["delta_gi"].is_null() == false);
    }
    // Stage 0 equals the pipeline-recorded mean ‖S₀ − T‖ on the same split.
    let metrics = fs::read_to_string(Path::new(&art).join("metrics.csv")).unwrap();
    let stage0_l2: f64 = metrics
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .last()
        .unwrap()
        .parse()
        .unwrap();
    let gi0 = stages[0]["gi_hat_over_c1"].as_f64().unwrap();
    assert_eq!(gi0.to_bits(), stage0_l2.to_bits(), "{gi0} vs {stage0_l2}");
}

#[test]
fn analyze_pca_teacher_rows_and_stage_range() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg, art) = write_tiny_run(dir.path(), 3, 1);
    run(&["distill", "--config", &cfg, "--data", &data, "--out", &art]);
    let csv_path = dir.path().join("pca.csv");
    let out = run(&[
        "analyze-pca", "--artifact", &art, "--data", &data, "--stages", "0,1", "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let text = fs::read_to_string(&csv_path).unwrap();
    assert!(text.lines().any(|l| l.ends_with(",teacher")));
    assert!(text.lines().any(|l| l.ends_with(",student_stage_1")));

    // Requesting a stage beyond the chain is a usage error.
    let out = run(&[
        "analyze-pca", "--artifact", &art, "--data", &data, "--stages", "5", "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
}

#[test]
fn sweep_th_emits_requested_rows_with_monotone_cost() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg, art) = write_tiny_run(dir.path(), 3, 2);
    run(&["distill", "--config", &cfg, "--data", &data, "--out", &art]);
    let csv_path = dir.path().join("sweep.csv");
    let out = run(&[
        "sweep-th", "--artifact", &art, "--data", &data, "--points", "7", "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let text = fs::read_to_string(&csv_path).unwrap();
    let costs: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(costs.len(), 7);
    assert!(costs.windows(2).all(|w| w[0] <= w[1]), "{costs:?}");
    assert_eq!(costs[0], 0.0);
}
