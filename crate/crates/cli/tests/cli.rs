use std::path::Path;
use std::process::Command as Process;

use sbvqe_cli::commands::{InterpRow, NoiseCell};
use sbvqe_cli::output::{read_csv, Manifest, SweepRow};
use sbvqe_cli::{run, Command, ExperimentConfig, Overrides};
use serde_json::Value;

fn run_in(cmd: Command, json: &str, dir: &Path) -> Value {
    let cfg = ExperimentConfig::from_json(json).unwrap();
    run(cmd, cfg, &Overrides { out_dir: Some(dir.to_path_buf()), ..Default::default() }).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn exact_gs_fully_dimerized_limit() {
    let dir = tempfile::tempdir().unwrap();
    let v = run_in(Command::ExactGs, r#"{"model": {"n": 8, "t_minus": -1.0, "delta": 0.0}}"#, dir.path());
    assert!((v["z_r"].as_f64().unwrap() + 1.0).abs() < 1e-9, "{v}");
    assert_eq!(read_json(&dir.path().join("exact.json")), v);
}

#[test]
fn zero_budget_vqe_writes_valid_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"model": {"n": 4, "t_minus": 0.0, "delta": 0.0}, "optimizer": {"max_evaluations": 0},
                  "output": {"dump_circuit": true}}"#;
    let v = run_in(Command::Vqe, cfg, dir.path());
    assert_eq!(v["evaluations"], 0);
    let result = read_json(&dir.path().join("result.json"));
    assert_eq!(result["theta_opt"].as_array().unwrap().len(), 14);
    assert!(result["theta_opt"].as_array().unwrap().iter().all(|x| x.as_f64() == Some(0.0)));
    let rho = read_json(&dir.path().join("rho_bulk.json"));
    assert_eq!(rho["dim"], 16);
    assert_eq!(rho["data"].as_array().unwrap().len(), 256);
    let manifest: Manifest = serde_json::from_value(read_json(&dir.path().join("manifest.json"))).unwrap();
    assert_eq!(manifest.command, "vqe");
    for (name, hash) in &manifest.outputs {
        let bytes = std::fs::read(dir.path().join(name)).unwrap();
        assert_eq!(&sbvqe_cli::output::sha256_hex(&bytes), hash, "{name}");
    }
    assert!(dir.path().join("circuit.json").exists());
}

#[test]
fn seeded_vqe_rerun_is_identical() {
    let base = tempfile::tempdir().unwrap();
    let cfg = r#"{"model": {"n": 4, "t_minus": 0.5, "delta": 1.0}, "optimizer": {"max_evaluations": 150}, "seed": 3}"#;
    run_in(Command::Vqe, cfg, &base.path().join("a"));
    run_in(Command::Vqe, cfg, &base.path().join("b"));
    for f in ["result.json", "trace.jsonl", "sweep.csv", "rho_bulk.json", "manifest.json"] {
        assert_eq!(std::fs::read(base.path().join("a").join(f)).unwrap(), std::fs::read(base.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn bad_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"model": {"n": 1, "t_minus": 0.0, "delta": 0.0}}"#).unwrap();
    let status = Process::new(env!("CARGO_BIN_EXE_sbvqe"))
        .args(["exact-gs", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    std::fs::write(&cfg, r#"{"no_such_field": 1}"#).unwrap();
    let status = Process::new(env!("CARGO_BIN_EXE_sbvqe")).args(["exact-gs", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(status.code(), Some(2));

    // stochastic run without a seed
    std::fs::write(&cfg, r#"{"model": {"n": 4}}"#).unwrap();
    let status = Process::new(env!("CARGO_BIN_EXE_sbvqe")).args(["vqe", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn missing_reference_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"noise_study": {"reference": "/nonexistent/sweep.csv"}, "seed": 1}"#).unwrap();
    let status = Process::new(env!("CARGO_BIN_EXE_sbvqe")).args(["noise-study", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn single_point_sweep_has_one_row_per_source() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"model": {"n": 4, "t_minus": 0.0, "delta": 0.0}, "sweep": {"t_minus": [0.25], "sources": ["exact", "circuit-sim"]},
                  "optimizer": {"max_evaluations": 100}, "seed": 1}"#;
    run_in(Command::Sweep, cfg, dir.path());
    let rows: Vec<SweepRow> = read_csv(&dir.path().join("sweep.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.t_minus == 0.25 && r.error.is_empty()));
    assert_eq!(rows[0].source, "exact");
    assert_eq!(rows[1].source, "circuit-sim");
    assert!(!rows[1].theta_opt.is_empty());
}

#[test]
fn interp_with_equal_endpoints_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let theta = "[0.5, -0.25, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 0.05, 0.15]";
    let cfg = format!(
        r#"{{"model": {{"n": 4, "t_minus": 0.0, "delta": 0.0}},
             "interp": {{"theta_a": {theta}, "theta_b": {theta}, "alphas": [0.0, 0.5, 1.0], "nbar": [0.0]}}}}"#
    );
    run_in(Command::Interp, &cfg, dir.path());
    let rows: Vec<InterpRow> = read_csv(&dir.path().join("interp.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows[1..] {
        assert!((r.energy - rows[0].energy).abs() < 1e-12);
        assert!((r.z_r - rows[0].z_r).abs() < 1e-12);
    }
}

#[test]
fn noise_study_on_noiseless_reference_picks_zero_cell() {
    let base = tempfile::tempdir().unwrap();
    let sweep = base.path().join("sweep");
    run_in(
        Command::Sweep,
        r#"{"model": {"n": 4, "t_minus": 0.0, "delta": 0.0}, "sweep": {"t_minus": [-0.5, 0.5], "sources": ["circuit-sim"]},
            "optimizer": {"max_evaluations": 150}, "seed": 2}"#,
        &sweep,
    );
    let cfg = format!(
        r#"{{"model": {{"n": 4, "t_minus": 0.0, "delta": 0.0}}, "circuit": {{"leakage_threshold": 1e-4}},
             "noise_study": {{"reference": {:?}, "reference_source": "circuit-sim", "p_xy": [0.0, 0.02], "p_z": [0.0, 0.02]}},
             "seed": 2}}"#,
        sweep.join("sweep.csv")
    );
    let v = run_in(Command::NoiseStudy, &cfg, &base.path().join("study"));
    assert_eq!(v["argmin"]["p_xy"], 0.0);
    assert_eq!(v["argmin"]["p_z"], 0.0);
    let cells: Vec<NoiseCell> = read_csv(&base.path().join("study").join("noise_study.csv")).unwrap();
    assert_eq!(cells.len(), 4);
    assert!(cells[0].rss < 1e-20);
}
