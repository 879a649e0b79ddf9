use std::path::Path;
use std::process::{Command, Output};

use covpol::experiments::output::{read_summary, BaseMetrics, Provenance};

fn covpol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covpol")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

const SMALL: &str = r#"{
  "experiment": "base_run",
  "horizon_days": 10,
  "synthetic": {"n_countries": 40},
  "synthetic_seed": 3
}"#;

#[test]
fn base_run_writes_all_files_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = covpol(&["base_run", "--config", &config, "--seed", "42", "--ensemble", "12", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["macro_curve.csv", "micro_curve.csv", "mse_curve.csv"] {
        let text = std::fs::read_to_string(out.join(name)).unwrap();
        let p = Provenance::parse(&text).expect("header comment");
        assert_eq!(p.master_seed, 42);
        assert_eq!(text.lines().count(), 2 + 11);
    }
    let summary = read_summary::<BaseMetrics>(&out.join("summary.json")).unwrap();
    assert_eq!(summary.provenance.master_seed, 42);
    assert_eq!(summary.metrics.ensemble_size, 12);
    assert_eq!(summary.synthetic_seed, Some(3));
}

#[test]
fn flags_override_config_fields() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("pf");
    let o = covpol(&[
        "pf_vs_ensemble", "--config", &config, "--particles", "30", "--da-window", "3", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["experiment"], "pf_vs_ensemble");
    assert_eq!(s["metrics"]["n_particles"], 30);
    assert_eq!(s["metrics"]["da_window"], 3);
    assert_eq!(s["metrics"]["assimilations"].as_array().unwrap().len(), 3);
}

#[test]
fn generated_files_load_back_as_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let world = dir.path().join("world");
    let o = covpol(&["generate_synthetic", "--config", &config, "--out", world.to_str().unwrap()]);
    assert!(o.status.success());
    let body = format!(
        r#"{{"experiment": "base_run", "horizon_days": 10, "ensemble_size": 5,
            "paths": {{"countries": "{}", "observations": "{}", "output_dir": "{}"}}}}"#,
        world.join("countries.csv").display(),
        world.join("observations.csv").display(),
        dir.path().join("from_files").display()
    );
    let config = write_config(dir.path(), &body);
    let o = covpol(&["base_run", "--config", &config]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read_summary::<BaseMetrics>(&dir.path().join("from_files/summary.json")).unwrap();
    assert_eq!(summary.synthetic_seed, None);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    assert_eq!(covpol(&["base_run", "--config", missing.to_str().unwrap()]).status.code(), Some(2));

    let unknown_key = write_config(dir.path(), r#"{"experiment": "base_run", "colour": "red"}"#);
    assert_eq!(covpol(&["base_run", "--config", &unknown_key]).status.code(), Some(1));

    let config = write_config(dir.path(), SMALL);
    assert_eq!(covpol(&["base_run", "--config", &config, "--ensemble", "1"]).status.code(), Some(1));
    assert_eq!(covpol(&["no_such_experiment", "--config", &config]).status.code(), Some(1));

    // the output directory cannot be created below a regular file
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let out = blocker.join("out");
    assert_eq!(covpol(&["base_run", "--config", &config, "--out", out.to_str().unwrap()]).status.code(), Some(2));

    let short = format!(
        r#"{{"experiment": "base_run", "horizon_days": 10,
            "paths": {{"countries": "{0}/c.csv", "observations": "{0}/o.csv"}}}}"#,
        dir.path().display()
    );
    std::fs::write(
        dir.path().join("c.csv"),
        "code,name,income,democracy,capital_lat,capital_lon,pop_density,initial_lockdown\nA,A,1000,5,0,0,10,0\nB,B,2000,6,10,10,20,1\n",
    )
    .unwrap();
    std::fs::write(dir.path().join("o.csv"), "code,d0,d1\nA,0,1\nB,1,1\n").unwrap();
    let config = write_config(dir.path(), &short);
    let o = covpol(&["base_run", "--config", &config, "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}
