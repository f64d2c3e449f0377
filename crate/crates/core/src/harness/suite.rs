use std::fs;
use std::path::Path;

use serde_json::json;

use super::trial::{run_experiment, ExperimentSummary};
use super::{ExperimentConfig, MethodId};
use crate::error::{Error, Result};
use crate::methods::EnsMethod;
use crate::problems::ProblemSpec;

/// Names of the four benchmark experiments, in run order.
pub const SUITE_EXPERIMENTS: [&str; 4] = ["elliptic2d", "elliptic1d", "lorenz96", "oscillatory"];

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub experiment: &'static str,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub experiment: &'static str,
    pub summary: ExperimentSummary,
}

/// The benchmark protocol. `elliptic2d` runs six ensemble methods with
/// `α = 0.1` for 100 iterations; the other three experiments run EKI, TEKI,
/// IEKF, EKI-SL and IEKF-SL with `α = 0.05` up to `T = 30`. All use `N = 50`.
/// Every method of an experiment shares `base_seed`, so trial `k` starts
/// from the same initial ensemble for each method.
pub fn suite_entries(base_seed: u64, n_trials: usize, out: Option<&Path>) -> Vec<SuiteEntry> {
    use EnsMethod::*;
    let mut entries = Vec::new();
    for experiment in SUITE_EXPERIMENTS {
        let (problem, alpha, horizon, methods): (_, _, _, &[EnsMethod]) = match experiment {
            "elliptic2d" => (ProblemSpec::Elliptic2d, 0.1, 10.0, &[Iekf, IekfRzl, Eki, Teki, IekfSl, EkiSl]),
            "elliptic1d" => (ProblemSpec::Elliptic1d, 0.05, 30.0, &[Eki, Teki, Iekf, EkiSl, IekfSl]),
            "lorenz96" => (ProblemSpec::Lorenz96 { dt: 0.005 }, 0.05, 30.0, &[Eki, Teki, Iekf, EkiSl, IekfSl]),
            _ => (ProblemSpec::from_id("oscillatory").expect("built-in id"), 0.05, 30.0, &[Eki, Teki, Iekf, EkiSl, IekfSl]),
        };
        for &m in methods {
            let method = MethodId::Ensemble(m);
            let mut config = ExperimentConfig::new(problem.clone(), method, alpha, 0);
            config.n_iters = None;
            config.horizon = Some(horizon);
            config.n_members = 50;
            config.n_trials = n_trials;
            config.base_seed = base_seed;
            config.output_dir = out.map(|o| o.join(experiment).join(m.id()));
            entries.push(SuiteEntry { experiment, config });
        }
    }
    entries
}

/// Runs `entries` in order. With an output directory, writes `suite.json`
/// after every experiment has finished.
pub fn run_suite(entries: &[SuiteEntry], out: Option<&Path>) -> Result<Vec<SuiteResult>> {
    let mut results = Vec::with_capacity(entries.len());
    for e in entries {
        results.push(SuiteResult {
            experiment: e.experiment,
            summary: run_experiment(&e.config)?,
        });
    }
    if let Some(dir) = out {
        let runs: Vec<_> = results
            .iter()
            .map(|r| {
                json!({
                    "experiment": r.experiment,
                    "method": r.summary.config.method,
                    "diverged_trials": r.summary.diverged_trials,
                    "trials": r.summary.traces.len(),
                    "wall_clock_secs": r.summary.wall_clock_secs,
                })
            })
            .collect();
        let doc = json!({ "library": "enkopt", "version": env!("CARGO_PKG_VERSION"), "runs": runs });
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("suite.json");
        fs::write(&path, serde_json::to_string_pretty(&doc)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(results)
}
