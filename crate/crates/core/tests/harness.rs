use std::fs;

use serde_json::json;

use subrec::grid::{CoarsePartition, DomainSpec, GridFunction};
use subrec::harness::{self, sample_test_function, ExperimentConfig, ExperimentKind, OutputFormat, TestFunctionKind};
use subrec::recovery::BasisKind;
use subrec::Error;

fn resolve(kind: ExperimentKind, v: serde_json::Value) -> ExperimentConfig {
    ExperimentConfig::resolve(kind, v).unwrap()
}

#[test]
fn records_embed_the_resolved_config() {
    let cfg = resolve(ExperimentKind::CriticalStudy, json!({"h_sweep": [0.25, 0.125, 0.0625]}));
    let rec = harness::run(&cfg).unwrap();
    assert_eq!(rec.config, cfg);
    let doc: serde_json::Value = serde_json::from_str(&rec.to_json_string().unwrap()).unwrap();
    assert_eq!(doc["config"]["h_sweep"], json!([0.25, 0.125, 0.0625]));
    assert_eq!(doc["config"]["tolerances"]["band"], json!(0.25));
    let back: ExperimentConfig = serde_json::from_value(doc["config"].clone()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn critical_csv_has_fixed_columns() {
    let dir = tempfile::tempdir().unwrap();
    let rec = harness::run(&ExperimentConfig::defaults_for(ExperimentKind::CriticalStudy)).unwrap();
    let files = harness::write_record(&rec, dir.path(), OutputFormat::Csv).unwrap();
    assert_eq!(files.len(), 2);
    let csv = fs::read_to_string(dir.path().join("critical_study_ratios.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("h,ratio,rho_value,normalized_ratio"));
    assert_eq!(lines.count(), 5);

    let json_only = tempfile::tempdir().unwrap();
    let files = harness::write_record(&rec, json_only.path(), OutputFormat::Json).unwrap();
    assert_eq!(files.len(), 1);
}

#[test]
fn constant_profiles_converge_with_zero_differences() {
    let cfg = resolve(
        ExperimentKind::PointwiseLimitStudy,
        json!({"radial": {"kind": "constant", "value": 2.0}, "band_mode": "upper", "halvings": 10}),
    );
    let rec = harness::run(&cfg).unwrap();
    assert!(rec.passed);
    let diffs = rec.table("averages").unwrap().column("difference").unwrap();
    assert!(diffs[1..].iter().all(|d| d.abs() < 1e-13));
}

#[test]
fn one_dimensional_constant_stays_bounded() {
    let cfg = resolve(ExperimentKind::RateStudy, json!({"d": 1, "n": 512, "r_sweep": [1.0, 0.5, 0.25, 0.125, 0.0625]}));
    let rec = harness::run(&cfg).unwrap();
    let c = rec.table("constants").unwrap().column("constant").unwrap();
    let spread = c.iter().copied().fold(0.0, f64::max) / c.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(spread < 1.3, "{c:?}");
    assert!(rec.passed, "{:?}", rec.failed_checks());
}

#[test]
fn full_cell_averages_superconverge_in_one_dimension() {
    // With r = 1 the one-dimensional minimizer is a C^1 quadratic spline,
    // so smooth functions are recovered faster than the general rates.
    let cfg = resolve(ExperimentKind::ConvergenceStudy, json!({"r": 1.0, "n": 512, "m_sweep": [2, 4, 8, 16]}));
    let rec = harness::run(&cfg).unwrap();
    assert!(rec.fits["ms_l2"].slope > 2.8);
    assert!(rec.fits["ms_energy"].slope > 1.8);
    assert!((rec.fits["pc_l2"].slope - 1.0).abs() < 0.15);
}

#[test]
fn recover_function_reports_all_bases() {
    let cfg = resolve(ExperimentKind::Recover, json!({"n": 32, "m": 4, "r": 0.5}));
    let spec = DomainSpec::new(2, 32).unwrap();
    let part = CoarsePartition::new(spec, 4).unwrap();
    let u = sample_test_function(TestFunctionKind::SineProduct, &part, 0, 0);
    let mut errors = Vec::new();
    for basis in [BasisKind::PiecewiseConstant, BasisKind::Multiscale, BasisKind::WeightedMultiscale] {
        let cfg = ExperimentConfig { basis, ..cfg.clone() };
        let (rec, report) = harness::recover_function(&cfg, &u).unwrap();
        assert_eq!(rec.spec(), &spec);
        assert_eq!(report.params.basis, basis);
        assert_eq!(report.weighted_energy_error.is_some(), basis == BasisKind::WeightedMultiscale);
        errors.push(report.l2_error);
    }
    assert!(errors[1] < errors[0]);
}

#[test]
fn zero_function_is_recovered_exactly() {
    let cfg = resolve(ExperimentKind::Recover, json!({"n": 16, "m": 2, "r": 0.5}));
    let u = GridFunction::zeros(DomainSpec::new(2, 16).unwrap());
    let (rec, report) = harness::recover_function(&cfg, &u).unwrap();
    assert!(rec.values().iter().all(|&v| v == 0.0));
    assert_eq!(report.l2_error, 0.0);
}

#[test]
fn misaligned_sweeps_surface_alignment_errors() {
    let cfg = resolve(ExperimentKind::ConvergenceStudy, json!({"n": 100, "m_sweep": [2, 3]}));
    assert!(matches!(harness::run(&cfg), Err(Error::Alignment(_))));
    let cfg = resolve(ExperimentKind::RateStudy, json!({"n": 16, "r_sweep": [0.3]}));
    assert!(matches!(harness::run(&cfg), Err(Error::Alignment(_))));
}

#[test]
fn experiments_reject_foreign_configs() {
    let cfg = ExperimentConfig::defaults_for(ExperimentKind::CriticalStudy);
    assert!(matches!(harness::rate_study(&cfg), Err(Error::Config(_))));
    let cfg = ExperimentConfig::defaults_for(ExperimentKind::Recover);
    assert!(matches!(harness::run(&cfg), Err(Error::Config(_))));
}
