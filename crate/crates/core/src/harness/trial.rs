use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use super::output::{aggregate, read_initial_ensemble, write_experiment, AggregateRow};
use super::{ExperimentConfig, MethodId};
use crate::derivative::{run_derivative, DerivMethodConfig, JacobianProvider};
use crate::ensemble::{anomalies, Ensemble};
use crate::error::{as_divergence, Error, Result};
use crate::methods::{EnsMethodConfig, MethodState};
use crate::problems::Problem;
use crate::rng::{rng_from_seed, trial_seed};

/// Metrics of one iteration, evaluated at the ensemble mean (or the single
/// iterate of a derivative-based method).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub t: f64,
    pub rel_err: f64,
    pub j_dm: f64,
    pub j_tp: f64,
    /// `‖P^uu‖_F`; zero for derivative-based methods.
    pub cov_frob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DivergenceInfo {
    pub iter: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunTrace {
    pub trial: usize,
    pub seed: u64,
    pub rows: Vec<TraceRow>,
    pub divergence: Option<DivergenceInfo>,
}

impl RunTrace {
    pub fn diverged_at(&self) -> Option<usize> {
        self.divergence.as_ref().map(|d| d.iter)
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }
}

fn metrics(problem: &Problem, iter: usize, alpha: f64, u: &DVector<f64>, cov_frob: f64) -> Result<TraceRow> {
    let j_dm = problem.data_misfit(u)?;
    let j_tp = j_dm + problem.prior_penalty(u)?;
    Ok(TraceRow {
        iter,
        t: iter as f64 * alpha,
        rel_err: problem.relative_error(u),
        j_dm,
        j_tp,
        cov_frob,
    })
}

/// `‖P^uu‖_F`, computed through the `N × N` Gram matrix of the anomalies,
/// which has the same nonzero spectrum.
fn cov_frob(ens: &Ensemble, mean: &DVector<f64>) -> f64 {
    let a = anomalies(ens.members(), mean);
    (a.transpose() * &a).norm() / ens.n_members() as f64
}

/// Runs trial `trial` of `cfg` on an already built problem. `initial`
/// overrides the prior draw of the initial ensemble.
pub fn run_trial_on(problem: &Problem, cfg: &ExperimentConfig, trial: usize, initial: Option<&Ensemble>) -> Result<RunTrace> {
    cfg.validate()?;
    let n_iters = cfg.iterations()?;
    let seed = trial_seed(cfg.base_seed, trial as u64);
    let mut rows = Vec::with_capacity(n_iters + 1);
    let outcome = match cfg.method {
        MethodId::Derivative(m) => {
            let jac = cfg.jacobian.unwrap_or_else(|| JacobianProvider::for_problem(problem));
            let dcfg = DerivMethodConfig {
                alpha: cfg.alpha,
                max_iters: n_iters,
            };
            run_derivative(m, problem, &jac, &dcfg, |i, u| {
                rows.push(metrics(problem, i, cfg.alpha, u, 0.0).map_err(|e| as_divergence(e, m.id(), i))?);
                Ok(())
            })
            .map(|_| ())
        }
        MethodId::Ensemble(m) => {
            let ecfg = EnsMethodConfig {
                rtol_pinv: cfg.rtol_pinv,
                ..EnsMethodConfig::new(m, cfg.alpha, cfg.n_members, n_iters)
            };
            let mut rng = rng_from_seed(seed);
            let mut state = match initial {
                Some(e) => MethodState::new(problem, e.clone(), &ecfg)?,
                None => MethodState::from_prior(problem, &ecfg, &mut rng)?,
            };
            let mut record = |st: &MethodState| -> Result<()> {
                let mean = st.current().mean();
                let row = metrics(problem, st.iter(), cfg.alpha, &mean, cov_frob(st.current(), &mean))
                    .map_err(|e| as_divergence(e, m.id(), st.iter()))?;
                rows.push(row);
                Ok(())
            };
            (|| {
                record(&state)?;
                for _ in 0..n_iters {
                    state.advance(problem, &ecfg, &mut rng)?;
                    record(&state)?;
                }
                Ok(())
            })()
        }
    };
    let divergence = match outcome {
        Ok(()) => None,
        Err(Error::Divergence { iter, reason, .. }) => Some(DivergenceInfo { iter, reason }),
        Err(e) => return Err(e),
    };
    Ok(RunTrace {
        trial,
        seed,
        rows,
        divergence,
    })
}

/// Builds the configured problem and runs one trial.
pub fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<RunTrace> {
    let problem = cfg.problem.build()?;
    let initial = match &cfg.initial_ensemble {
        Some(path) => Some(read_initial_ensemble(path)?),
        None => None,
    };
    run_trial_on(&problem, cfg, trial, initial.as_ref())
}

/// All trials of an experiment and their aggregate.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub traces: Vec<RunTrace>,
    pub aggregate: Vec<AggregateRow>,
    pub diverged_trials: usize,
    pub wall_clock_secs: f64,
}

impl ExperimentSummary {
    pub fn all_diverged(&self) -> bool {
        self.diverged_trials == self.traces.len()
    }

    /// Final-iteration values of `metric` across trials that did not
    /// diverge.
    pub fn final_values(&self, metric: impl Fn(&TraceRow) -> f64) -> Vec<f64> {
        self.traces
            .iter()
            .filter(|t| t.divergence.is_none())
            .filter_map(|t| t.last().map(&metric))
            .collect()
    }
}

/// Runs every trial (in parallel), aggregates, and writes the outputs when
/// `cfg.output_dir` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    let start = Instant::now();
    let cfg = cfg.resolved()?;
    let problem = cfg.problem.build()?;
    let initial = match &cfg.initial_ensemble {
        Some(path) => Some(read_initial_ensemble(path)?),
        None => None,
    };
    let traces = (0..cfg.n_trials)
        .into_par_iter()
        .map(|k| run_trial_on(&problem, &cfg, k, initial.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let diverged_trials = traces.iter().filter(|t| t.divergence.is_some()).count();
    let summary = ExperimentSummary {
        aggregate: aggregate(&traces),
        traces,
        diverged_trials,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        config: cfg,
    };
    if let Some(dir) = &summary.config.output_dir {
        write_experiment(&summary, dir)?;
    }
    Ok(summary)
}
