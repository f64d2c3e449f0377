use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn enkopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_enkopt"))
        .args(args)
        .env_remove("ENKOPT_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn list_prints_nine_methods_and_five_problems() {
    let o = enkopt(&["list"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let methods = ["iexkf", "ilm-dm", "ilm-tp", "iekf", "iekf-rzl", "eki", "teki", "iekf-sl", "eki-sl"];
    let problems = ["elliptic2d", "elliptic1d", "lorenz96", "oscillatory", "linear"];
    let ids: Vec<&str> = text.lines().filter_map(|l| l.strip_prefix("  ")).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(ids.len(), 14);
    for id in methods.iter().chain(&problems) {
        assert!(ids.contains(id), "{id} missing");
    }
}

#[test]
fn run_writes_trials_aggregate_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let o = enkopt(&[
        "run", "--problem", "elliptic2d", "--method", "eki", "--alpha", "0.1", "--members", "50", "--iters", "100",
        "--trials", "10", "--seed", "7", "--out", path(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for k in 0..10 {
        let csv = fs::read_to_string(out.join(format!("trial_{k}.csv"))).unwrap();
        assert!(csv.starts_with("iter,t,rel_err,j_dm,j_tp,cov_frob\n"));
        assert_eq!(csv.lines().count(), 102);
        assert!(!csv.contains('\r'));
    }
    assert!(out.join("aggregate.csv").exists());
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["base_seed"], 7);
    assert_eq!(manifest["trials"].as_array().unwrap().len(), 10);
}

#[test]
fn flags_override_config_file_and_env_sets_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"problem": {"id": "linear", "d": 4, "k": 3}, "method": "eki", "alpha": 0.5, "n_iters": 50, "n_trials": 3, "n_members": 10}"#,
    )
    .unwrap();
    let env_out = dir.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_enkopt"))
        .args(["run", "--config", path(&cfg), "--iters", "4", "--trials", "2"])
        .env("ENKOPT_OUT", &env_out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(env_out.join("trial_1.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(!env_out.join("trial_2.csv").exists());

    let flag_out = dir.path().join("from_flag");
    let o = Command::new(env!("CARGO_BIN_EXE_enkopt"))
        .args(["run", "--config", path(&cfg), "--out", path(&flag_out)])
        .env("ENKOPT_OUT", &env_out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(flag_out.join("trial_2.csv").exists());
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["run", "--bogus"],
        vec!["run", "--problem", "nope", "--method", "eki", "--alpha", "0.1", "--iters", "3"],
        vec!["run", "--problem", "linear", "--method", "nope", "--alpha", "0.1", "--iters", "3"],
        vec!["run", "--problem", "linear", "--method", "eki", "--alpha", "-1", "--iters", "3"],
        vec!["run", "--problem", "linear", "--method", "eki", "--alpha", "0.1", "--iters", "3", "--horizon", "1"],
        vec!["run", "--problem", "linear", "--method", "eki", "--alpha", "0.1"],
        vec!["run", "--method", "eki", "--alpha", "0.1", "--iters", "3"],
        vec!["frobnicate"],
        vec!["oracle", "--method", "iekf"],
        vec!["suite"],
    ] {
        let o = enkopt(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(!o.stderr.is_empty());
    }
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(enkopt(&["run", "--config", path(&bad)]).status.code(), Some(1));
    let missing = dir.path().join("missing.json");
    assert_eq!(enkopt(&["run", "--config", path(&missing)]).status.code(), Some(1));
}

#[test]
fn divergence_in_all_trials_exits_with_two() {
    let o = enkopt(&["run", "--problem", "elliptic2d", "--method", "iekf-rzl", "--alpha", "0.1", "--iters", "100", "--trials", "3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_exits_with_zero() {
    assert_eq!(enkopt(&["--help"]).status.code(), Some(0));
    assert_eq!(enkopt(&["run", "--help"]).status.code(), Some(0));
}

#[test]
fn oracle_prints_moment_rows() {
    let o = enkopt(&["oracle", "--method", "iekf-sl", "--d", "2", "--k", "2", "--t-end", "1", "--points", "5"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,m_0,m_1,c_0_0,c_0_1,c_1_0,c_1_1");
    assert_eq!(lines.len(), 6);
    for l in &lines[1..] {
        let vals: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(vals.len(), 7);
        assert_eq!(vals[4], vals[5]);
        assert!(vals[3] > 0.0 && vals[6] > 0.0);
    }
}

#[test]
fn initial_ensemble_file_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let ens = dir.path().join("ens.json");
    fs::write(&ens, "[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]").unwrap();
    let out = dir.path().join("o");
    let o = enkopt(&[
        "run", "--problem", "linear", "--method", "eki", "--alpha", "0.5", "--iters", "10", "--trials", "1",
        "--initial-ensemble", path(&ens), "--out", path(&out),
    ]);
    // the default linear problem has d = 10, so a 3-dimensional ensemble is rejected
    assert_eq!(o.status.code(), Some(1));
    let members: Vec<Vec<f64>> = (0..4).map(|j| (0..10).map(|i| ((i + j) % 3) as f64).collect()).collect();
    fs::write(&ens, serde_json::to_string(&members).unwrap()).unwrap();
    let o = enkopt(&[
        "run", "--problem", "linear", "--method", "eki", "--alpha", "0.5", "--iters", "10", "--trials", "1",
        "--members", "4", "--initial-ensemble", path(&ens), "--out", path(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("ens.json"));
}
