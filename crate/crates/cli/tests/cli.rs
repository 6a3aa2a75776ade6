use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn cavcool(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cavcool"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = cavcool(args);
    assert!(
        out.status.success(),
        "cavcool {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Header and rows of a CSV file, by column name.
fn read_csv(path: &Path) -> (Vec<String>, Vec<BTreeMap<String, String>>) {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| header.iter().cloned().zip(l.split(',').map(String::from)).collect())
        .collect();
    (header, rows)
}

fn column(rows: &[BTreeMap<String, String>], name: &str) -> Vec<f64> {
    rows.iter().map(|r| r[name].parse().unwrap()).collect()
}

fn metadata(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("metadata.json")).unwrap()).unwrap()
}

#[test]
fn fig2_is_reproducible_and_complete() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        run_ok(&["fig2", "--trajectories", "200", "--tmax", "50", "--seed", "7", "--out", dir.to_str().unwrap()]);
    }
    let meta = metadata(&a);
    let files: Vec<&str> = meta["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
    for f in ["populations.csv", "detection_a1.csv", "detection_a2.csv", "nbar_sweep.csv", "records.csv"] {
        assert!(files.contains(&f), "{f} missing from {files:?}");
    }
    for f in &files {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs between runs");
    }
    assert_eq!(meta["seed"], 7);
    assert!(meta["rng"].as_str().unwrap().contains("ChaCha20"));
    assert_eq!(meta["resolved"]["params"]["detuning"], 700.0);

    let (header, rows) = read_csv(&a.join("populations.csv"));
    assert_eq!(rows.len(), 101);
    assert_eq!(header.len(), 9);
    let (_, rows) = read_csv(&a.join("detection_a1.csv"));
    assert_eq!(rows.len(), 50);

    let (_, rows) = read_csv(&a.join("nbar_sweep.csv"));
    assert_eq!(column(&rows, "nbar"), vec![0.0, 0.02, 0.04, 0.06, 0.08, 0.1]);
    let p = column(&rows, "ground_population");
    assert!(p.windows(2).all(|w| w[1] < w[0]), "{p:?}");
}

#[test]
fn fig2_from_the_ground_level_only_shows_the_scattering_floor() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("g");
    let n_traj = 1000.0;
    run_ok(&["fig2", "--start", "ground", "--trajectories", "1000", "--tmax", "100", "--out", dir.to_str().unwrap()]);
    let meta = metadata(&dir);
    for mode in [1, 2] {
        let (_, rows) = read_csv(&dir.join(format!("detection_a{mode}.csv")));
        let counts: f64 = column(&rows, "rate").iter().map(|r| r * n_traj).sum();
        let expected = meta["diagnostics"]["stationary_photon_flux"][format!("a{mode}")].as_f64().unwrap() * 100.0 * n_traj;
        let sigma = expected.sqrt();
        assert!(
            (counts - expected).abs() < 3.0 * sigma,
            "mode {mode}: {counts} detections, expected {expected} ± {sigma}"
        );
    }
}

#[test]
fn fig2_aborts_outside_the_perturbative_regime() {
    let tmp = TempDir::new().unwrap();
    let out = cavcool(&["fig2", "--g", "300", "--out", tmp.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--force"), "{err}");
}

#[test]
fn fig3_trends() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("f3");
    run_ok(&["fig3", "--N", "4,6", "--g", "10,20,30,40", "--tmax", "200", "--out", dir.to_str().unwrap()]);
    let (_, rows) = read_csv(&dir.join("asymptotic.csv"));
    assert_eq!(rows.len(), 8);
    let p = column(&rows, "ground_population");
    let (n4, n6) = p.split_at(4);
    assert!(n4.windows(2).all(|w| w[1] > w[0]), "{n4:?}");
    assert!(n6.windows(2).all(|w| w[1] > w[0]), "{n6:?}");
    assert!(n6[3] < n4[3]);

    let (header, rows) = read_csv(&dir.join("timeseries.csv"));
    assert_eq!(header, vec!["time", "ground_N4", "ground_N6"]);
    assert_eq!(rows.len(), 21);
    let (_, rows) = read_csv(&dir.join("paths.csv"));
    assert_eq!(rows.len(), 16 + 64);
    assert!(rows.iter().all(|r| r["path_length"] != "unreachable"));
}

#[test]
fn fig3_without_spontaneous_emission_reaches_the_ground_level() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("f3");
    run_ok(&["fig3", "--N", "4", "--gamma", "0", "--tmax", "100", "--out", dir.to_str().unwrap()]);
    let (_, rows) = read_csv(&dir.join("asymptotic.csv"));
    for p in column(&rows, "ground_population") {
        assert!((p - 1.0).abs() < 1e-6, "{p}");
    }
}

#[test]
fn custom_chain_with_a_delta_comb() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("chain.toml");
    fs::write(
        &cfg,
        "[run]\nsolver = \"markov\"\n\n[spin]\nmodel = \"chain\"\nn_sites = 6\n\n\
         [markov.spectrum]\nshape = \"comb\"\nlines = [[20.0, 0.5], [40.0, 0.5]]\n",
    )
    .unwrap();
    let dir = tmp.path().join("out");
    run_ok(&["custom", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    let (_, rows) = read_csv(&dir.join("markov_populations.csv"));
    assert_eq!(rows.len(), 201);
    let (_, rows) = read_csv(&dir.join("asymptotic.csv"));
    let total: f64 = column(&rows, "probability").iter().sum();
    assert!((total - 1.0).abs() < 1e-9);
    let (_, rows) = read_csv(&dir.join("rates.csv"));
    assert!(!rows.is_empty());
    assert!(metadata(&dir)["regime"]["checks"].is_array());
}

#[test]
fn echo_prints_the_resolved_parameters_without_running() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("never");
    let out = run_ok(&["fig2", "--nbar", "0.05", "--echo", "--out", dir.to_str().unwrap()]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("nbar = 0.05"), "{text}");
    assert!(text.contains("[resolved]"), "{text}");
    assert!(!dir.exists());
}

#[test]
fn unknown_config_fields_are_named() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[drive]\nomegaa = 1.0\n").unwrap();
    let out = cavcool(&["custom", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("omegaa"), "{err}");
}

#[test]
fn spectrum_of_the_two_spin_model() {
    let out = run_ok(&["spectrum"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "index,energy,sz");
    let e: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    let j = 5.0;
    for (got, want) in e.iter().zip([-7.0 * j / 4.0, -3.0 * j / 4.0, j / 4.0, 9.0 * j / 4.0]) {
        assert!((got - want).abs() < 1e-10, "{e:?}");
    }
}

#[test]
fn validate_sets_the_exit_code() {
    assert_eq!(cavcool(&["validate"]).status.code(), Some(0));
    let out = cavcool(&["validate", "--g", "300"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("regime: FAIL"));
}
