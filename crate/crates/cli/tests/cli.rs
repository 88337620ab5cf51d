use std::fs::{self, File};
use std::path::Path;
use std::process::{Command, Output};

use subrec::grid::{DomainSpec, GridFunction};

fn subrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subrec")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn passing_experiment_exits_zero_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = subrec(&["critical", "--out", path(dir.path()), "--threads", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS normalized_band"));
    let csv = fs::read_to_string(dir.path().join("critical_study_ratios.csv")).unwrap();
    assert!(csv.starts_with("h,ratio,rho_value,normalized_ratio\n"));
    assert!(dir.path().join("critical_study.json").exists());
}

#[test]
fn failing_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tight.json");
    fs::write(&cfg, r#"{"tolerances": {"band": 0.001}}"#).unwrap();
    let out = subrec(&["critical", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn configuration_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"h_sweep": [0.1, 0.2, 0.15]}"#).unwrap();
    let out = subrec(&["critical", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(subrec(&["pointwise", "--config", path(&cfg)]).status.code(), Some(2));
    let missing = dir.path().join("absent.json");
    assert_eq!(subrec(&["rates", "--config", path(&missing)]).status.code(), Some(2));
    assert_eq!(subrec(&["recover", "--out", path(dir.path())]).status.code(), Some(2));
}

#[test]
fn seed_flag_is_recorded_and_json_format_skips_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = subrec(&["pointwise", "--seed", "17", "--format", "json", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("pointwise_limit_study.json")).unwrap()).unwrap();
    assert_eq!(doc["config"]["seed"], 17);
    assert!(!dir.path().join("pointwise_limit_study_averages.csv").exists());
}

#[test]
fn recover_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DomainSpec::new(2, 16).unwrap();
    let u = GridFunction::from_fn(spec, |x| (x[0] * (1.0 - x[0])) * (x[1] * (1.0 - x[1])));
    let input = dir.path().join("u.bin");
    u.write_binary(File::create(&input).unwrap()).unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"n": 16, "m": 2, "r": 0.5}"#).unwrap();
    let out = subrec(&["recover", "--config", path(&cfg), "--input", path(&input), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rec = GridFunction::read_csv(std::io::BufReader::new(File::open(dir.path().join("recovered.csv")).unwrap())).unwrap();
    assert_eq!(rec.spec(), &spec);
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("recover.json")).unwrap()).unwrap();
    assert!(doc["report"]["l2_error"].as_f64().unwrap() < u.lp_norm(2.0, None).unwrap());
    assert_eq!(doc["config"]["basis"], "multiscale");
}

#[test]
fn help_documents_columns() {
    let out = subrec(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("h,ratio,rho_value,normalized_ratio"));
    assert!(text.contains("Exit status"));
}
