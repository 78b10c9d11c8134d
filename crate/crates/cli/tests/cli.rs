use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mhsolve::output::{read_contract_csv, CONTRACT_HEADER, FRONTIER_HEADER};
use mhsolve::{parse_config, parse_config_str, ProblemSpec, Reservation};
use moral_hazard::contracts::{contract_utility, contract_wage, CanonicalContract};
use proptest::prelude::*;
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(format!("{name}.json"))
}

fn mhsolve(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mhsolve"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn error_of(out: &Output) -> Value {
    assert!(!out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    v["error"].clone()
}

#[test]
fn every_fixture_parses() {
    for entry in std::fs::read_dir(fixture("x").parent().unwrap()).unwrap() {
        let path = entry.unwrap().path();
        let spec = parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        for r in spec.reservations() {
            spec.problem(r).unwrap();
        }
    }
}

#[test]
fn solve_artifacts_agree_with_the_serialized_contract() {
    let dir = tempfile::tempdir().unwrap();
    let out = mhsolve(&fixture("gaussian_log_low"), dir.path(), &["--command", "solve"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));

    let result = read_json(&dir.path().join("result.json"));
    let contract: CanonicalContract = serde_json::from_value(result["result"]["contract"].clone()).unwrap();
    let spec = parse_config(&fixture("gaussian_log_low")).unwrap();
    let p = spec.problem(spec.reservations()[0]).unwrap();

    let text = std::fs::read_to_string(dir.path().join("contract.csv")).unwrap();
    assert!(text.starts_with(&(CONTRACT_HEADER.join(",") + "\n")));
    let rows = read_contract_csv(text.as_bytes()).unwrap();
    assert_eq!(rows.len(), 1001);
    assert!(rows.windows(2).all(|w| w[0].y < w[1].y));
    for r in rows {
        let w = contract_wage(&p, &contract, r.y).unwrap();
        let v = contract_utility(&p, &contract, r.y).unwrap();
        assert!((w - r.wage).abs() <= 1e-9 * (1.0 + w), "wage at {}: {} vs {w}", r.y, r.wage);
        assert!((v - r.utility).abs() <= 1e-9 * (1.0 + v.abs()));
    }

    let curve = csv::Reader::from_path(dir.path().join("action_curve.csv")).unwrap();
    assert_eq!(curve.into_records().count(), 401);
}

#[test]
fn pareto_frontier_is_convex_and_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let out = mhsolve(&fixture("gaussian_log_sweep"), dir.path(), &["--command", "pareto"]);
    assert!(out.status.success());
    let mut r = csv::Reader::from_path(dir.path().join("frontier.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), FRONTIER_HEADER.as_slice());
    let w: Vec<f64> = r.records().map(|row| row.unwrap()[1].parse().unwrap()).collect();
    assert_eq!(w.len(), 20);
    assert!(w.windows(2).all(|p| p[0] <= p[1]));
    assert!(w.windows(3).all(|t| t[2] - 2.0 * t[1] + t[0] >= -1e-8));
    let json = read_json(&dir.path().join("frontier.json"));
    assert_eq!(json.as_array().map(Vec::len), Some(20));
}

#[test]
fn bench_reports_every_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = mhsolve(&fixture("gaussian_log_high"), dir.path(), &["--command", "bench", "--repeats", "21"]);
    assert!(out.status.success());
    let b = read_json(&dir.path().join("bench.json"));
    let runs = b["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 21);
    let (p10, med, p90) = (b["p10_ms"].as_f64().unwrap(), b["median_ms"].as_f64().unwrap(), b["p90_ms"].as_f64().unwrap());
    assert!(p10 <= med && med <= p90);
    for run in runs {
        assert_eq!(run["provenance"], "ActiveSetFirstIteration");
        assert!(run["wall_time_ms"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn too_few_bench_repeats_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mhsolve(&fixture("gaussian_log_high"), dir.path(), &["--command", "bench", "--repeats", "5"]);
    assert_eq!(error_of(&out)["kind"], "usage");
    assert!(!dir.path().join("bench.json").exists());
}

#[test]
fn parse_errors_carry_a_position() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, "{\n  \"a0\": 100,\n  \"sigma\" 3\n}\n").unwrap();
    let out = mhsolve(&config, &dir.path().join("out"), &["--command", "solve"]);
    let err = error_of(&out);
    assert_eq!(err["kind"], "parse");
    assert_eq!(err["line"], 3);
    assert!(err["column"].as_u64().unwrap() > 0);
}

#[test]
fn invalid_configs_and_missing_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let missing = mhsolve(&dir.path().join("nope.json"), dir.path(), &["--command", "solve"]);
    assert_eq!(error_of(&missing)["kind"], "io");

    let mut spec = parse_config(&fixture("gaussian_log_high")).unwrap();
    spec.a0 = 500.0;
    let config = dir.path().join("config.json");
    std::fs::write(&config, serde_json::to_string(&spec).unwrap()).unwrap();
    let out = mhsolve(&config, dir.path(), &["--command", "solve"]);
    assert_ne!(error_of(&out)["kind"], "parse");
}

#[test]
fn unknown_keys_are_rejected() {
    let text = std::fs::read_to_string(fixture("gaussian_log_high")).unwrap();
    let extra = text.replacen('{', "{\n  \"reservation\": 4.0,", 1);
    assert!(parse_config_str(&extra).is_err());
}

fn arb_spec() -> impl Strategy<Value = ProblemSpec> {
    let base = parse_config(&fixture("gaussian_log_high")).unwrap();
    (
        1e-3f64..1e3,
        1e-6f64..1.0,
        1.1f64..4.0,
        prop_oneof![
            (-10.0f64..10.0).prop_map(Reservation::Single),
            prop::collection::vec(-10.0f64..10.0, 1..6).prop_map(Reservation::Sweep),
        ],
    )
        .prop_map(move |(sigma, kappa, power, reservation)| {
            let mut s = base.clone();
            s.distribution = moral_hazard::distributions::DistributionSpec::Gaussian { sigma };
            s.cost = moral_hazard::preferences::CostSpec::new(kappa, power).unwrap();
            s.reservation_utility = reservation;
            s
        })
}

proptest! {
    #[test]
    fn configs_round_trip_through_json(spec in arb_spec()) {
        let text = serde_json::to_string_pretty(&spec).unwrap();
        prop_assert_eq!(parse_config_str(&text).unwrap(), spec);
    }

    #[test]
    fn config_parser_never_panics(text in "\\PC{0,200}") {
        let _ = parse_config_str(&text);
    }
}
