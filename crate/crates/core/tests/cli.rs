use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_metamargin");

const SMALL_CONFIG: &str = r#"{
  "environment": { "d_raw": 4, "k": 3, "prototype_scale": 1.0, "noise_sigma": 0.4, "balanced": true },
  "family": { "kind": "random_linear", "count": 3, "dim": 4 },
  "learner": { "kind": "nearest_centroid" },
  "bound": { "k": 3, "rho": 1.0, "delta": 0.1, "m": 12, "n": 8, "b": 1.0 },
  "trials": 6,
  "task_draws": 6,
  "test_points_per_task": 10,
  "outer_task_draws": 2,
  "complexity_draws": 40,
  "test_episodes": 10,
  "seed": 42
}"#;

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("METAMARGIN_SEED").env_remove("METAMARGIN_OUTPUT_DIR");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("cfg.json");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn bound_prints_report_json() {
    let out = run(
        &["bound", "--k", "5", "--rho", "1", "--m", "100", "--n", "50", "--v", "17", "--b", "1", "--delta", "0.1", "--avg-loss", "0.1"],
        &[],
    );
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["empirical_term", "confidence_term", "complexity_term", "total", "kind", "vacuous"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert_eq!(report["kind"], "vc");
}

#[test]
fn missing_flag_exits_two_with_usage() {
    let out = run(&["bound", "--k", "5", "--rho", "1"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn all_trials_failing_exits_three() {
    // two-example episodes over three classes always leave a class out of training
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL_CONFIG.replace(r#""m": 12, "n": 8"#, r#""m": 2, "n": 2"#));
    let out_path = dir.path().join("r.csv");
    let out = run(&["simulate", "--config", &cfg, "--output", out_path.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("every trial failed"));
    let sweep = run(&["sweep", "--config", &cfg, "--axis", "n", "--values", "2", "--output", out_path.to_str().unwrap()], &[]);
    assert_eq!(sweep.status.code(), Some(0), "sweeps record failures in their rows");
}

#[test]
fn bad_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL_CONFIG.replace(r#""k": 3, "rho""#, r#""k": 4, "rho""#));
    let out = run(&["simulate", "--config", &cfg], &[]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = write_config(dir.path(), "{ not json");
    assert_eq!(run(&["simulate", "--config", &cfg], &[]).status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_CONFIG);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (path, threads) in [(&a, "1"), (&b, "3")] {
        let out = run(&["simulate", "--config", &cfg, "--seed", "42", "--output", path.to_str().unwrap(), "--threads", threads], &[]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let text = std::fs::read(&a).unwrap();
    assert_eq!(text, std::fs::read(&b).unwrap());
    let rows = metamargin::harness::read_results_csv(&a).unwrap();
    assert_eq!(rows.len(), 6);
}

#[test]
fn overrides_follow_flag_config_environment_order() {
    let dir = tempfile::tempdir().unwrap();
    let no_seed = SMALL_CONFIG.replace(r#""seed": 42"#, r#""trials": 2"#).replace(r#""trials": 6,"#, "");
    let cfg = write_config(dir.path(), &no_seed);
    let out_dir = dir.path().to_str().unwrap();

    let env_run = run(&["simulate", "--config", &cfg], &[("METAMARGIN_SEED", "5"), ("METAMARGIN_OUTPUT_DIR", out_dir)]);
    assert_eq!(env_run.status.code(), Some(0), "{}", String::from_utf8_lossy(&env_run.stderr));
    let from_env = std::fs::read(dir.path().join("results.csv")).unwrap();

    let flag_path = dir.path().join("flag.csv");
    let flag_run = run(
        &["simulate", "--config", &cfg, "--seed", "5", "--output", flag_path.to_str().unwrap()],
        &[("METAMARGIN_SEED", "6")],
    );
    assert_eq!(flag_run.status.code(), Some(0));
    assert_eq!(std::fs::read(&flag_path).unwrap(), from_env);

    let other = dir.path().join("other.csv");
    run(&["simulate", "--config", &cfg, "--output", other.to_str().unwrap()], &[("METAMARGIN_SEED", "6")]);
    assert_ne!(std::fs::read(&other).unwrap(), from_env);

    let bad = run(&["simulate", "--config", &cfg], &[("METAMARGIN_SEED", "abc")]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn estimate_reads_matrix_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    std::fs::write(&path, "# b=1\nlabel,x1,x2\nr0,1,0\nr1,0,1\n").unwrap();
    let out = run(&["estimate", "--input", path.to_str().unwrap(), "--draws", "5000", "--cover-eps", "0.5"], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["rows"], 2);
    assert!((v["massart"].as_f64().unwrap() - 0.83255).abs() < 1e-4);
    assert!((v["gaussian"]["mean"].as_f64().unwrap() - 0.5642).abs() < 0.05);
    assert_eq!(v["cover_size"], 2);
}

#[test]
fn sweep_writes_rows_in_input_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_CONFIG);
    let out_path = dir.path().join("s.csv");
    let out = run(
        &["sweep", "--config", &cfg, "--axis", "rho", "--values", "2,-1,0.5", "--output", out_path.to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&out_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("rho,2.0,ok"));
    assert!(lines[2].starts_with("rho,-1.0,error"));
    assert!(lines[3].starts_with("rho,0.5,ok"));
}
