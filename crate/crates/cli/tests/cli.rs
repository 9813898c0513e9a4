use std::path::Path;
use std::process::{Command, Output};

use isaacs_lab_cli::{run, sweep, ExperimentConfig, Method, RunManifest, SweepAxis, SweepConfig};

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_isaacs-lab"))
}

fn write_config(dir: &Path, json: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, json).unwrap();
    path
}

fn run_binary(args: &[&str]) -> Output {
    binary().args(args).output().unwrap()
}

fn read_manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn heat_pde_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"model": "heat_no_control", "method": "pde", "grid": {"nx": 60}}"#);
    let out = dir.path().join("out");
    let o = run_binary(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = read_manifest(&out);
    let files: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for f in &files {
        assert!(out.join(f).exists(), "{f} listed but missing");
    }
    assert!(files.contains(&"value_lower.csv") && files.contains(&"report.csv"));
    let header = std::fs::read_to_string(out.join("value_lower.csv")).unwrap();
    assert!(header.starts_with("t,x,value,flag,k_plus,k_minus\n"));
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report.contains("lower.residual,"));
    assert_eq!(manifest["all_passed"], true);
    assert_eq!(manifest["config"]["method"], "pde");
}

#[test]
fn cfl_violation_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"model": "heat_no_control", "method": "pde", "grid": {"nx": 100, "nt": 10, "auto_cfl": false}}"#,
    );
    let o = run_binary(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("CFL"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"model": "heat_no_control", "method": "pde", "grid": {"nx": 3}}"#);
    let o = run_binary(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.nx"));

    let cfg = write_config(dir.path(), r#"{"model": "heat_no_control", "method": "pde"}"#);
    let o = run_binary(&["run", "--config", cfg.to_str().unwrap(), "--method", "simplex"]);
    assert_eq!(o.status.code(), Some(2));

    let o = binary()
        .args(["run", "--config", cfg.to_str().unwrap()])
        .env("ISAACS_LAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_checks_exit_four() {
    let dir = tempfile::tempdir().unwrap();
    // a weak penalty may miss the barrier tolerance; the exit code must follow the manifest
    let cfg = write_config(
        dir.path(),
        r#"{"model": "risk_sensitive_1d", "method": "penalized", "penalty": 0.5, "grid": {"nx": 40}}"#,
    );
    let o = run_binary(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    let manifest = read_manifest(&dir.path().join("o"));
    let expected = if manifest["all_passed"] == true { 0 } else { 4 };
    assert_eq!(o.status.code(), Some(expected));
}

#[test]
fn list_models_prints_builtins() {
    let o = run_binary(&["list-models"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for name in ["heat_no_control", "risk_sensitive_1d", "separable_isaacs", "nonseparable", "ramsey_1d"] {
        assert!(text.contains(name));
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"model": "risk_sensitive_1d", "method": "risk-sensitive-mc", "n_paths": 2000, "grid": {"nx": 40}, "seed": 1}"#,
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, seed) in [(&a, "1"), (&b, "2")] {
        let o = run_binary(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(read_manifest(&b)["config"]["seed"], 2);
    assert_ne!(
        std::fs::read(a.join("identity.csv")).unwrap(),
        std::fs::read(b.join("identity.csv")).unwrap()
    );
}

fn all_methods_config(method: Method) -> ExperimentConfig {
    let mut c = ExperimentConfig::new("risk_sensitive_1d", method);
    c.grid.nx = 40;
    c.n_paths = 4000;
    c.p_max = 6;
    c
}

#[test]
fn every_method_runs_and_reproduces() {
    for method in Method::ALL {
        let config = all_methods_config(method);
        let first = tempfile::tempdir().unwrap();
        let second = tempfile::tempdir().unwrap();
        let m: RunManifest = run(&config, first.path()).unwrap();
        run(&config, second.path()).unwrap();
        for f in m.files.iter().filter(|f| f.ends_with(".csv")) {
            assert_eq!(
                std::fs::read(first.path().join(f)).unwrap(),
                std::fs::read(second.path().join(f)).unwrap(),
                "{} differs for {}",
                f,
                method.name()
            );
        }
        let checks = std::fs::read_to_string(first.path().join("checks.csv")).unwrap();
        assert_eq!(checks.lines().count(), m.checks.len() + 1);
    }
}

#[test]
fn crosscheck_table_lists_every_route() {
    let dir = tempfile::tempdir().unwrap();
    let m = run(&all_methods_config(Method::Crosscheck), dir.path()).unwrap();
    let table = std::fs::read_to_string(dir.path().join("crosscheck.csv")).unwrap();
    for route in ["pde", "pde-transform", "rbsde-chain", "dynkin", "mc"] {
        assert!(table.lines().any(|l| l.starts_with(&format!("{route},"))), "{route} missing");
    }
    assert!(m.all_passed, "{:?}", m.checks);
}

#[test]
fn heat_refinement_sweep_decays() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig::new("heat_no_control", Method::Pde);
    let axis = SweepConfig {
        axis: SweepAxis::Nx,
        values: vec![50.0, 100.0, 200.0],
    };
    let m = sweep(&config, &axis, dir.path()).unwrap();
    assert!(m.all_passed);
    let rows: Vec<Vec<f64>> = std::fs::read_to_string(dir.path().join("sweep.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    let exact = (-0.5f64).exp();
    assert!((rows[1][1] - exact).abs() < (rows[0][1] - exact).abs());
    assert!((rows[2][1] - exact).abs() < (rows[1][1] - exact).abs());
}

#[test]
fn penalty_sweep_approaches_reflection() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::new("risk_sensitive_1d", Method::Penalized);
    config.grid.nx = 40;
    let axis = SweepConfig {
        axis: SweepAxis::Penalty,
        values: vec![10.0, 100.0, 1000.0],
    };
    assert!(sweep(&config, &axis, dir.path()).unwrap().all_passed);
}

#[test]
fn approximation_index_sweep_via_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"model": "risk_sensitive_1d", "method": "approx-chain", "grid": {"nx": 30}}"#);
    let out = dir.path().join("o");
    let o = run_binary(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--axis",
        "p",
        "--values",
        "1,2,3,4,5,6,7,8,9,10,11,12",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(std::fs::read_to_string(out.join("sweep.csv")).unwrap().lines().count(), 13);
}
