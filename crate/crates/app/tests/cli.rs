mod common;

use std::path::Path;
use std::process::{Command, Output};

fn bolus(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bolus"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_subcommand_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = bolus(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn invalid_config_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"advisor": {"cost": {"gamma": 1.0}}}"#).unwrap();
    let o = bolus(dir.path(), &["--config", "cfg.json", "collect"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let mut full = bolus_app::AppConfig::default();
    full.advisor.cost.gamma = 2.0;
    std::fs::write(&cfg, full.to_json()).unwrap();
    let o = bolus(dir.path(), &["--config", "cfg.json", "collect"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("gamma"), "{}", stderr(&o));

    std::fs::write(&cfg, r#"{"colour": 1}"#).unwrap();
    let o = bolus(dir.path(), &["--config", "cfg.json", "collect"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn collect_train_recommend_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = bolus(d, &["--seed", "4", "--out", "data", "collect", "--patient", "adult#003"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("data/adult_003/samples.csv").exists());
    assert!(d.join("data/adult_003/collection_cgm.csv").exists());

    let o = bolus(
        d,
        &["--out", "models", "train", "--samples", "data/adult_003/samples.csv", "--meal-free"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let model = "models/breakfast.model.json";
    assert!(d.join(model).exists());

    let window = "130,131,133,135,136,138,139,140";
    let args = ["--seed", "9", "--out", "rec", "recommend", "--model", model, "--window", window];
    let first = bolus(d, &args);
    assert!(first.status.success(), "{}", stderr(&first));
    let second = bolus(d, &args);
    assert_eq!(first.stdout, second.stdout);
    let v: serde_json::Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(v["schema"], "v1");
    assert!(v["recommendation"]["final_bolus"].as_f64().unwrap() >= 0.0);
    assert!(d.join("rec/recommendation.json").exists());

    let o = bolus(d, &["recommend", "--model", model, "--window", "130,131,133,135,136,138,139"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("expected 8"), "{}", stderr(&o));

    let o = bolus(d, &["recommend", "--model", model, "--window", window, "--carbs", "40"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("meal-free"), "{}", stderr(&o));

    let o = bolus(d, &["recommend", "--model", "missing.model.json", "--window", window]);
    assert_eq!(o.status.code(), Some(3));

    let o = bolus(d, &["train", "--samples", "nope.csv"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn simulate_writes_traces_for_one_patient() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = bolus(
        d,
        &[
            "--out", "sim", "simulate", "--protocol", "b", "--basal-scale", "0.8",
            "--patient", "adult#002", "--policy", "calculator",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let cgm = std::fs::read_to_string(d.join("sim/B_0.8_nm/adult_002/calculator_cgm.csv")).unwrap();
    assert_eq!(cgm.lines().count(), 1 + 24 * 4 + 1);
    assert!(d.join("sim/metrics.csv").exists());

    let o = bolus(d, &["simulate", "--protocol", "a", "--basal-scale", "0.8"]);
    assert_eq!(o.status.code(), Some(3));
    let o = bolus(d, &["simulate", "--patient", "adult#999"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn train_and_replay_from_a_clinical_trace() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (trace, _) = common::write_clinical_files(d);
    let trace = trace.to_str().unwrap();
    // five days for training, as in an advisory study
    let o = bolus(
        d,
        &["--out", "m", "train", "--trace", trace, "--until", "2024-03-06T00:00:00", "--meal-free"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = bolus(
        d,
        &[
            "--out", "rp", "replay", "--trace", trace,
            "--model", "m/breakfast.model.json", "--model", "m/lunch_dinner.model.json",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("rp/replay.json")).unwrap()).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len() + report["skipped"].as_array().unwrap().len(), 21);
    assert!(rows.len() >= 18);
    let csv = std::fs::read_to_string(d.join("rp/replay.csv")).unwrap();
    assert_eq!(csv.lines().count(), rows.len() + 1);
}
