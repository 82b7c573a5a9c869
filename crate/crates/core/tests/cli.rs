use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use scissorsim::harness::{reconstruct_from_records, RunMode};
use scissorsim::tomography::{read_counts_csv, write_counts_csv};
use scissorsim::{
    run_experiment, CircuitConfig, ExperimentPlan, Polarization, Profile, QubitState,
};
use serde_json::Value;

fn scissorsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scissorsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

const CONFIG: &str = r#"{
    "gamma1": 0.041,
    "qubit": {"alpha": [0.7071067811865476, 0.0], "beta": [0.0, -0.7071067811865476]},
    "eta_H": 0.7768,
    "eta_V": 0.7768,
    "tau": 0.45,
    "delta": 1.0,
    "V1": 0.99,
    "V2": 0.91
}"#;

#[test]
fn analytic_over_the_builtin_profile() {
    let out = scissorsim(&["analytic"]);
    assert_eq!(out.status.code(), Some(0));
    let rows = json(&out);
    let g_nom: Vec<f64> = rows
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["G_nom"].as_f64().unwrap())
        .collect();
    assert_eq!(g_nom.len(), 3);
    assert!((g_nom[2] - 6.500_956_022_944_55).abs() < 1e-9);
}

#[test]
fn analytic_with_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "c.json", CONFIG);
    let out = scissorsim(&["analytic", "--config", &path, "--number-resolving"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!((v["g2"].as_f64().unwrap() - 0.7768 / 0.2232).abs() < 1e-9);
    let config = CircuitConfig::from_json(CONFIG).unwrap();
    assert_eq!(
        CircuitConfig::from_json(&config.to_json().unwrap()).unwrap(),
        config
    );
}

#[test]
fn unknown_config_fields_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = CONFIG.replace("\"tau\"", "\"tau_typo\": 1.0, \"tau\"");
    let path = write(dir.path(), "bad.json", &bad);
    let out = scissorsim(&["analytic", "--config", &path]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tau_typo"));
    assert!(CircuitConfig::from_json(&bad).is_err());
}

#[test]
fn reproduce_exit_code_tracks_the_comparisons() {
    assert_eq!(scissorsim(&["reproduce", "table1"]).status.code(), Some(0));
    assert_eq!(scissorsim(&["reproduce", "fig3"]).status.code(), Some(0));

    let mut profile: Value =
        serde_json::from_str(include_str!("../profiles/reference.json")).unwrap();
    profile["table1"][0]["G_nom"] = Value::from(9.0);
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "p.json", &profile.to_string());
    let out = scissorsim(&["reproduce", "table1", "--config", &path]);
    assert_eq!(out.status.code(), Some(2));
    let checks = json(&out)["checks"].as_array().unwrap().clone();
    assert!(checks.iter().any(|c| c["pass"] == Value::Bool(false)));
}

#[test]
fn simulated_counts_feed_tomography() {
    let dir = tempfile::tempdir().unwrap();
    let counts = dir.path().join("counts.csv");
    let out = scissorsim(&[
        "simulate",
        "--g2",
        "3.48",
        "--mode",
        "sampled",
        "--pulses",
        "600000",
        "--seed",
        "11",
        "--polarizations",
        "D",
        "--counts-out",
        counts.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = json(&out);
    let expected: QubitState =
        serde_json::from_value(report["states"][0]["reconstructed"].clone()).unwrap();

    let out = scissorsim(&["tomo", "--counts", counts.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let got = QubitState::from_json(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    assert!((got.matrix - expected.matrix).norm() < 1e-12);
    assert!((got.vacuum_weight - expected.vacuum_weight).abs() < 1e-12);
}

#[test]
fn counts_csv_round_trip() {
    let profile = Profile::reference();
    let mut plan = ExperimentPlan::exact(profile.config(2.08).unwrap(), vec![Polarization::H]);
    plan.mode = RunMode::Sampled;
    plan.n_pulses = 90_000;
    plan.seed = 5;
    let report = run_experiment(&plan).unwrap();
    let mut buf = Vec::new();
    write_counts_csv(&report.counts_amp, &mut buf).unwrap();
    let back = read_counts_csv(buf.as_slice()).unwrap();
    let mut sorted = report.counts_amp.clone();
    sorted.sort_by_key(|r| (r.basis, r.herald));
    assert_eq!(back, sorted);
    let a = reconstruct_from_records(&back, 0.32).unwrap();
    let b = reconstruct_from_records(&report.counts_amp, 0.32).unwrap();
    assert_eq!(a, b);
}

#[test]
fn malformed_counts_are_rejected() {
    let header = "basis,detector,herald_pattern,C3,C4\n";
    for body in [
        "HV,D5,D1D3,10,20\n",
        "HV,D7,D1D3,10,2\n",
        "XY,D5,D1D3,10,2\n",
        "HV,D5,D1D3,10,2\nHV,D6,D1D3,11,2\n",
    ] {
        assert!(
            read_counts_csv(format!("{header}{body}").as_bytes()).is_err(),
            "{body}"
        );
    }
}

#[test]
fn sweep_writes_one_row_per_point() {
    let out = scissorsim(&[
        "sweep", "--param", "g2", "--from", "1", "--to", "100", "--points", "7", "--log",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    assert!(headers.iter().any(|h| h == "sim_P"));
    assert_eq!(rdr.records().count(), 7);

    let out = scissorsim(&["sweep", "--param", "tau", "--from", "0.9", "--to", "0.1"]);
    assert_eq!(out.status.code(), Some(1));
}
