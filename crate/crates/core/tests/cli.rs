use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nino::model::{ConvLstmXt, Trainable};
use nino::pipeline::ExperimentConfig;
use nino::rng;
use nino::tensor::read_checkpoint;
use serde_json::json;
use tempfile::TempDir;

fn nino(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nino")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = nino(args);
    assert!(
        out.status.success(),
        "nino {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, seed: &str) -> PathBuf {
    let out = dir.join(format!("synth{seed}"));
    ok(&["synth", "--seed", seed, "--out", s(&out)]);
    out
}

fn sorted_listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

fn train(data: &Path, out: &Path, epochs: &str) {
    ok(&[
        "train",
        "--sst",
        s(&data.join("sst.csv")),
        "--ohc",
        s(&data.join("ohc.csv")),
        "--out",
        s(out),
        "--epochs",
        epochs,
        "--seed",
        "4",
    ]);
}

#[test]
fn bad_arguments_exit_with_usage_error() {
    assert_eq!(nino(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(nino(&["oni", "--window", "twelve"]).status.code(), Some(2));
    assert_eq!(nino(&["oni"]).status.code(), Some(2));
    assert!(nino(&["--help"]).status.success());
}

#[test]
fn missing_input_fails_without_partial_outputs() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("oni");
    let r = nino(&["oni", "--sst", s(&dir.path().join("nope.csv")), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&r.stderr).contains("nope.csv"));
    assert!(!out.exists());

    let r = nino(&["evaluate", "--model-dir", s(&dir.path().join("no-model"))]);
    assert_eq!(r.status.code(), Some(3));
}

#[test]
fn malformed_csv_is_a_format_error() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "variable,units,lat,lon,time,value\nsst,degC,0,190,2000-13,27\n").unwrap();
    let r = nino(&["oni", "--sst", s(&bad), "--out", s(&dir.path().join("o"))]);
    assert_eq!(r.status.code(), Some(4));
}

#[test]
fn oni_flags_follow_the_planted_events() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "1");
    let spec: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(data.join("spec.json")).unwrap()).unwrap();

    // the same scenario with no events and no noise never flags a row
    let mut quiet = spec.clone();
    quiet["events"] = json!([]);
    quiet["noise_sigma"] = json!(0.0);
    let cfg = dir.path().join("quiet.json");
    std::fs::write(&cfg, json!({ "seed": 1, "synth": quiet }).to_string()).unwrap();
    let quiet_dir = dir.path().join("quiet");
    ok(&["synth", "--config", s(&cfg), "--out", s(&quiet_dir)]);

    let count_events = |sst: &Path, out: &Path| -> usize {
        ok(&["oni", "--sst", s(sst), "--out", s(out)]);
        let text = std::fs::read_to_string(out.join("events.csv")).unwrap();
        assert!(text.starts_with("t,event\n"));
        text.lines().filter(|l| l.ends_with(",true")).count()
    };
    assert_eq!(count_events(&quiet_dir.join("sst.csv"), &dir.path().join("oni-quiet")), 0);
    assert!(count_events(&data.join("sst.csv"), &dir.path().join("oni-events")) > 0);
    for f in ["anomaly.csv", "oni.csv", "quarters.csv", "events.csv", "config.json"] {
        assert!(dir.path().join("oni-events").join(f).is_file(), "{f}");
    }
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = TempDir::new().unwrap();
    let a = std::fs::read(synth(dir.path(), "9").join("sst.csv")).unwrap();
    let b = std::fs::read(synth(&dir.path().join("again"), "9").join("sst.csv")).unwrap();
    let c = std::fs::read(synth(dir.path(), "10").join("sst.csv")).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn zero_epochs_saves_the_initial_weights() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "2");
    let model = dir.path().join("model");
    train(&data, &model, "0");

    let cfg = ExperimentConfig::default();
    let init = ConvLstmXt::init(cfg.convlstm_config(3, 11), rng::mix(&[4, 1])).unwrap();
    let saved = read_checkpoint(model.join("convlstm").join("model.ckpt")).unwrap();
    let expected: Vec<(String, nino::tensor::Tensor)> = init
        .named_parameters()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    assert_eq!(saved, expected);
    let curve = std::fs::read_to_string(model.join("convlstm").join("loss_curve.csv")).unwrap();
    assert_eq!(curve.trim(), "epoch,train_mse,test_mse");
}

#[test]
fn train_predict_evaluate_round_trip() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "3");
    let (m1, m2) = (dir.path().join("m1"), dir.path().join("m2"));
    train(&data, &m1, "1");
    train(&data, &m2, "1");
    for f in ["convlstm/model.ckpt", "cnn/model.ckpt", "convlstm/loss_curve.csv", "sst_norm.json", "ohc_norm.json"] {
        assert_eq!(std::fs::read(m1.join(f)).unwrap(), std::fs::read(m2.join(f)).unwrap(), "{f}");
    }
    assert!(m1.join("convlstm/model.ckpt.json").is_file());

    let p = ok(&["predict", "--model-dir", s(&m1)]);
    assert!(String::from_utf8_lossy(&p.stdout).contains("2020-01"));
    let pred = std::fs::read_to_string(m1.join("predict/prediction.csv")).unwrap();
    // 7 months on 3 x 11 cells plus the header
    assert_eq!(pred.lines().count(), 1 + 7 * 33);
    assert!(m1.join("predict/prediction_quarters.csv").is_file());

    ok(&["evaluate", "--model-dir", s(&m1), "--self-test", "--out", s(&dir.path().join("self"))]);
    let report = std::fs::read_to_string(dir.path().join("self/report.csv")).unwrap();
    let rows: Vec<&str> = report.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.ends_with(",100.00")), "{report}");

    let e = ok(&["evaluate", "--model-dir", s(&m1)]);
    assert!(String::from_utf8_lossy(&e.stdout).contains("config"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(m1.join("evaluate/report.json")).unwrap()).unwrap();
    assert_eq!(report["n_steps"], 53);
    assert_eq!(report["configs"].as_array().unwrap().len(), 6);
}

#[test]
fn render_writes_thirteen_stable_images() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "5");
    let render = |out: &Path| {
        ok(&[
            "render",
            "--grid",
            s(&data.join("sst.csv")),
            "--climatology-from",
            s(&data.join("sst.csv")),
            "--from",
            "2003-01",
            "--months",
            "7",
            "--format",
            "ppm",
            "--out",
            s(out),
        ]);
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    render(&a);
    render(&b);
    let names = sorted_listing(&a);
    assert_eq!(names.len(), 13);
    assert_eq!(names.iter().filter(|n| n.starts_with("month_")).count(), 7);
    assert_eq!(names.iter().filter(|n| n.starts_with("period_")).count(), 5);
    assert!(names.contains(&"average_2003-01_to_2003-07.ppm".to_string()));
    assert_eq!(names, sorted_listing(&b));
    for n in &names {
        assert_eq!(std::fs::read(a.join(n)).unwrap(), std::fs::read(b.join(n)).unwrap(), "{n}");
    }
}

#[test]
fn render_of_a_constant_field_anomaly_is_white() {
    let dir = TempDir::new().unwrap();
    let spec = json!({
        "seed": 0,
        "synth": {
            "axes": { "lats": [-1.0, 1.0], "lons": [-170.0, -168.0, -166.0] },
            "start": "2000-01",
            "months": 24,
            "base_temp": 27.0,
            "seasonal_amplitude": 0.0,
            "noise_sigma": 0.0,
            "events": [],
            "ohc_lag": 3,
            "seed": 0
        }
    });
    let cfg = dir.path().join("flat.json");
    std::fs::write(&cfg, spec.to_string()).unwrap();
    let data = dir.path().join("flat");
    ok(&["synth", "--config", s(&cfg), "--out", s(&data)]);
    let out = dir.path().join("img");
    ok(&[
        "render",
        "--grid",
        s(&data.join("sst.csv")),
        "--climatology-from",
        s(&data.join("sst.csv")),
        "--months",
        "1",
        "--cell-px",
        "2",
        "--format",
        "ppm",
        "--out",
        s(&out),
    ]);
    let mut golden = b"P6\n6 4\n255\n".to_vec();
    golden.extend([255u8; 3 * 6 * 4]);
    assert_eq!(std::fs::read(out.join("month_2000-01.ppm")).unwrap(), golden);
}
