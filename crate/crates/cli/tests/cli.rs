use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn eoscan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eoscan")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = eoscan(args);
    assert!(out.status.success(), "eoscan {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn write_annotation(dir: &Path, id: &str, w: usize, h: usize, centers: &str) -> PathBuf {
    let path = dir.join(format!("{id}.json"));
    let text = format!(
        r#"{{"slide_id":"{id}","width":{w},"height":{h},"eos_centers":{centers},"bz_polygons":[[[10,10],[200,10],[200,120],[10,120]]]}}"#
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn rasterize_writes_both_masks() {
    let dir = tempfile::tempdir().unwrap();
    let ann = write_annotation(dir.path(), "r1", 300, 200, "[[100,100]]");
    let out = dir.path().join("masks");
    ok(&["rasterize", "--annotation", s(&ann), "--out-dir", s(&out)]);
    let eos = eoscan::io::read_pgm(&out.join("r1.eos.pgm")).unwrap();
    let bz = eoscan::io::read_pgm(&out.join("r1.bz.pgm")).unwrap();
    assert_eq!((eos.width(), eos.height()), (300, 200));
    assert_eq!(eos.count_ones(), 1961);
    assert_eq!(bz.count_ones(), 191 * 111);
    assert!(!out.join("r1.tissue.pgm").exists());
}

#[test]
fn malformed_annotation_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("bad.json");
    fs::write(&ann, r#"{"slide_id":"bad","height":100,"eos_centers":[],"bz_polygons":[]}"#).unwrap();
    let out = eoscan(&["rasterize", "--annotation", s(&ann), "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("width"));
}

#[test]
fn blank_slide_scans_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("blank.json");
    fs::write(&ann, r#"{"slide_id":"blank","width":2644,"height":2144,"eos_centers":[],"bz_polygons":[]}"#).unwrap();
    let out = dir.path().join("scan");
    let cohort = dir.path().join("cohort.csv");
    ok(&["scan", "--annotation", s(&ann), "--out-dir", s(&out), "--append-cohort", s(&cohort)]);
    let summary = read_json(&out.join("blank.biomarkers.json"));
    assert_eq!(summary["n_cols"], 2);
    assert_eq!(summary["n_rows"], 1);
    let values = &summary["biomarkers"]["values"];
    assert_eq!(values["pec"], 0);
    assert_eq!(values["sec"], 0.0);
    assert_eq!(values["pbz"], 0.0);
    assert_eq!(values["sbz"], 0.0);
    assert_eq!(summary["config"]["stride"], 500);
    let text = fs::read_to_string(&cohort).unwrap();
    assert!(text.starts_with("slide_id,pec,sec,pbz,sbz"));
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn scan_reproduces_synthetic_expectation() {
    let dir = tempfile::tempdir().unwrap();
    let slide = dir.path().join("slide");
    ok(&["synth", "slide", "--size", "3200", "2600", "--seed", "5", "--out-dir", s(&slide)]);
    let expected = read_json(&slide.join("synth5.expected.json"));
    let out = dir.path().join("scan");
    ok(&["scan", "--annotation", s(&slide.join("synth5.annotation.json")), "--out-dir", s(&out)]);
    let got = read_json(&out.join("synth5.biomarkers.json"));
    let got = &got["biomarkers"]["values"];
    let want = &expected["expected"];
    assert_eq!(got["pec"], want["pec"]);
    for k in ["sec", "pbz", "sbz"] {
        let (a, b) = (got[k].as_f64().unwrap(), want[k].as_f64().unwrap());
        assert!((a - b).abs() <= 1e-12, "{k}: {a} vs {b}");
    }
}

#[test]
fn stride_override_changes_map_shape() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("wide.json");
    fs::write(&ann, r#"{"slide_id":"wide","width":3144,"height":2144,"eos_centers":[],"bz_polygons":[]}"#).unwrap();
    let cols = |stride: usize| {
        let out = dir.path().join(format!("s{stride}"));
        let st = stride.to_string();
        ok(&["--stride", &st, "scan", "--annotation", s(&ann), "--out-dir", s(&out)]);
        let summary = read_json(&out.join("wide.biomarkers.json"));
        let want = eoscan::hpf_windows(3144, 2144, 2144, stride).unwrap().n_cols;
        assert_eq!(summary["n_cols"], want as u64);
        summary["n_cols"].as_u64().unwrap()
    };
    assert_ne!(cols(500), cols(536));
}

#[test]
fn eval_seg_scores_identity_and_degradation() {
    let dir = tempfile::tempdir().unwrap();
    let ann = write_annotation(dir.path(), "e1", 400, 300, "[[100,100],[250,200]]");
    let gt = dir.path().join("gt");
    let degraded = dir.path().join("degraded");
    ok(&["rasterize", "--annotation", s(&ann), "--out-dir", s(&gt)]);
    ok(&["rasterize", "--annotation", s(&ann), "--out-dir", s(&degraded), "--flip-rate", "0.05", "--flip-seed", "2"]);

    let same = dir.path().join("same");
    ok(&["eval-seg", "--gt-dir", s(&gt), "--pred-dir", s(&gt), "--out-dir", s(&same)]);
    let report = read_json(&same.join("seg_metrics.json"));
    for k in ["miou", "mprecision", "mrecall", "mspecificity"] {
        assert_eq!(report["overall"][k], 1.0, "{k}");
    }
    assert!(same.join("seg_metrics.csv").exists());

    let worse = dir.path().join("worse");
    ok(&["eval-seg", "--gt-dir", s(&gt), "--pred-dir", s(&degraded), "--out-dir", s(&worse)]);
    let report = read_json(&worse.join("seg_metrics.json"));
    assert!(report["overall"]["miou"].as_f64().unwrap() < 1.0);
}

#[test]
fn eval_seg_rejects_unmatched_ids() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_annotation(dir.path(), "a", 250, 150, "[]");
    let b = write_annotation(dir.path(), "b", 250, 150, "[]");
    ok(&["rasterize", "--annotation", s(&a), "--out-dir", s(&dir.path().join("gt"))]);
    ok(&["rasterize", "--annotation", s(&b), "--out-dir", s(&dir.path().join("pred"))]);
    let out = eoscan(&[
        "eval-seg",
        "--gt-dir",
        s(&dir.path().join("gt")),
        "--pred-dir",
        s(&dir.path().join("pred")),
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn training_and_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("cohort.csv");
    ok(&["synth", "cohort", "--preset", "separated", "--n", "120", "--seed", "4", "--out", s(&cohort)]);
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        ok(&["--n-seeds", "4", "report", "--cohort", s(&cohort), "--kind", "svm", "--out-dir", s(&out)]);
        ok(&["train", "--cohort", s(&cohort), "--kind", "lda", "--seed", "3", "--out", s(&out.join("model.json"))]);
        ok(&["classify", "--cohort", s(&cohort), "--model", s(&out.join("model.json")), "--out", s(&out.join("pred.csv"))]);
        ok(&["sweep-baseline", "--cohort", s(&cohort), "--out-dir", s(&out)]);
    }
    for file in ["metrics.csv", "report.json", "roc_pec.csv", "model.json", "pred.csv", "baseline.json"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between runs");
    }
    let report = read_json(&dir.path().join("a/report.json"));
    assert_eq!(report["evaluation"]["n_seeds"], 4);
    assert!(report["evaluation"]["median"]["accuracy"].as_f64().unwrap() >= 0.95);
    assert!(report["ks"]["pec"]["d_statistic"].as_f64().unwrap() > 0.5);
    assert!(report["ks_active"]["pbz"]["p_value"].as_f64().unwrap() <= 1.0);
    let baseline = read_json(&dir.path().join("a/baseline.json"));
    assert_eq!(baseline["best_accuracy"], 1.0);
    let preds = fs::read_to_string(dir.path().join("a/pred.csv")).unwrap();
    assert_eq!(preds.lines().count(), 121);
}

#[test]
fn windowed_report_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("cohort.csv");
    ok(&["synth", "cohort", "--preset", "windowed", "--n", "200", "--out", s(&cohort)]);
    let out = dir.path().join("r");
    ok(&["--n-seeds", "3", "report", "--cohort", s(&cohort), "--windowed", "--out-dir", s(&out)]);
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["evaluation"]["model"]["kind"], "windowed");
}

#[test]
fn training_requires_severity_column() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("nolabel.csv");
    let mut text = String::from("slide_id,pec,sec,pbz,sbz\n");
    for i in 0..30 {
        text.push_str(&format!("s{i},{i},0.1,0.2,0.3\n"));
    }
    fs::write(&cohort, text).unwrap();
    let out = eoscan(&["train", "--cohort", s(&cohort), "--out", s(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("severe"));
}

#[test]
fn bad_parameters_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("cohort.csv");
    ok(&["synth", "cohort", "--preset", "separated", "--n", "40", "--out", s(&cohort)]);
    let out = eoscan(&["--delta", "13", "report", "--cohort", s(&cohort), "--windowed", "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));

    let config = dir.path().join("config.json");
    fs::write(&config, r#"{"strid": 400}"#).unwrap();
    let out = eoscan(&["--config", s(&config), "sweep-baseline", "--cohort", s(&cohort), "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("strid"));
}

#[test]
fn config_file_values_apply_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("c.json");
    fs::write(&ann, r#"{"slide_id":"c","width":3144,"height":2144,"eos_centers":[],"bz_polygons":[]}"#).unwrap();
    let config = dir.path().join("config.json");
    fs::write(&config, r#"{"stride": 1000, "eos_threshold": 20}"#).unwrap();
    let out = dir.path().join("a");
    ok(&["--config", s(&config), "scan", "--annotation", s(&ann), "--out-dir", s(&out)]);
    let summary = read_json(&out.join("c.biomarkers.json"));
    assert_eq!(summary["config"]["stride"], 1000);
    assert_eq!(summary["config"]["eos_threshold"], 20);
    assert_eq!(summary["n_cols"], 2);
    let out = dir.path().join("b");
    ok(&["--config", s(&config), "--stride", "250", "scan", "--annotation", s(&ann), "--out-dir", s(&out)]);
    assert_eq!(read_json(&out.join("c.biomarkers.json"))["config"]["stride"], 250);
}
