use std::fs;

use enkopt::harness::{run_experiment, run_trial, TRACE_HEADER};
use enkopt::methods::EnsMethod;
use enkopt::derivative::DerivMethod;
use enkopt::{ExperimentConfig, MethodId, ProblemSpec};

fn linear_cfg(method: MethodId, iters: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(ProblemSpec::Linear { d: 4, k: 3, seed: 5 }, method, 0.2, iters);
    c.n_members = 20;
    c.n_trials = 3;
    c.base_seed = 42;
    c
}

#[test]
fn every_method_runs_through_the_harness() {
    for method in MethodId::all() {
        let cfg = linear_cfg(method, 10);
        let s = run_experiment(&cfg).unwrap();
        assert_eq!(s.traces.len(), 3, "{method}");
        assert_eq!(s.aggregate.len(), 11, "{method}");
        for t in &s.traces {
            assert!(t.rows.iter().all(|r| r.rel_err.is_finite() && r.j_tp >= r.j_dm));
            if !method.is_ensemble() {
                assert!(t.rows.iter().all(|r| r.cov_frob == 0.0));
            }
        }
    }
}

#[test]
fn written_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        let mut cfg = linear_cfg(MethodId::Ensemble(EnsMethod::IekfSl), 15);
        cfg.output_dir = Some(dir.path().join(run));
        run_experiment(&cfg).unwrap();
        let out = dir.path().join(run);
        let files: Vec<Vec<u8>> = ["trial_0.csv", "trial_1.csv", "trial_2.csv", "aggregate.csv"]
            .iter()
            .map(|f| fs::read(out.join(f)).unwrap())
            .collect();
        assert!(String::from_utf8_lossy(&files[0]).starts_with(TRACE_HEADER));
        assert!(out.join("manifest.json").exists());
        bytes.push(files);
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn trials_differ_but_methods_share_initial_ensembles() {
    let eki = linear_cfg(MethodId::Ensemble(EnsMethod::Eki), 3);
    let teki = linear_cfg(MethodId::Ensemble(EnsMethod::Teki), 3);
    let (a0, a1) = (run_trial(&eki, 0).unwrap(), run_trial(&eki, 1).unwrap());
    assert_ne!(a0.seed, a1.seed);
    assert_ne!(a0.rows[0].rel_err, a1.rows[0].rel_err);
    let b0 = run_trial(&teki, 0).unwrap();
    assert_eq!(a0.rows[0].rel_err, b0.rows[0].rel_err);
    assert_eq!(a0.rows[0].cov_frob, b0.rows[0].cov_frob);
}

#[test]
fn json_config_runs_like_the_builder() {
    let text = r#"{
        "problem": {"id": "linear", "d": 4, "k": 3, "seed": 5},
        "method": "ilm-dm",
        "alpha": 0.2,
        "horizon": 2.0,
        "n_trials": 1
    }"#;
    let from_json = ExperimentConfig::from_json(text).unwrap();
    assert_eq!(from_json.iterations().unwrap(), 10);
    let mut built = linear_cfg(MethodId::Derivative(DerivMethod::IlmDm), 10);
    built.n_trials = 1;
    built.base_seed = 0;
    built.n_members = from_json.n_members;
    let (a, b) = (run_trial(&from_json, 0).unwrap(), run_trial(&built, 0).unwrap());
    assert_eq!(a.rows, b.rows);
}
