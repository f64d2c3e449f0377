//! Multi-trial experiments: configuration, per-iteration traces, aggregation
//! across trials and persistence.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::derivative::{DerivMethod, JacobianProvider};
use crate::error::{Error, Result};
use crate::methods::EnsMethod;
use crate::problems::ProblemSpec;

mod output;
mod suite;
mod trial;

pub use output::{
    aggregate, aggregate_csv, format_float, read_initial_ensemble, trace_csv, write_experiment, AggregateRow, MetricSummary,
    TRACE_HEADER,
};
pub use suite::{run_suite, suite_entries, SuiteEntry, SuiteResult, SUITE_EXPERIMENTS};
pub use trial::{run_experiment, run_trial, run_trial_on, DivergenceInfo, ExperimentSummary, RunTrace, TraceRow};

/// Any of the nine optimizers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MethodId {
    Derivative(DerivMethod),
    Ensemble(EnsMethod),
}

impl MethodId {
    pub fn all() -> Vec<MethodId> {
        DerivMethod::ALL
            .into_iter()
            .map(MethodId::Derivative)
            .chain(EnsMethod::ALL.into_iter().map(MethodId::Ensemble))
            .collect()
    }

    pub fn id(self) -> &'static str {
        match self {
            MethodId::Derivative(m) => m.id(),
            MethodId::Ensemble(m) => m.id(),
        }
    }

    pub fn is_ensemble(self) -> bool {
        matches!(self, MethodId::Ensemble(_))
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::all()
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

impl TryFrom<String> for MethodId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MethodId> for String {
    fn from(m: MethodId) -> String {
        m.id().to_string()
    }
}

fn default_members() -> usize {
    50
}

fn default_trials() -> usize {
    10
}

/// One experiment: a problem, a method and the run protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub method: MethodId,
    pub alpha: f64,
    #[serde(default = "default_members")]
    pub n_members: usize,
    /// Number of iterations; derived from `horizon` when absent.
    #[serde(default)]
    pub n_iters: Option<usize>,
    /// Final time `T`; the run has `round(T / alpha)` iterations.
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub rtol_pinv: Option<f64>,
    /// Jacobian source for derivative-based methods. Defaults to the
    /// analytic Jacobian when the model has one.
    #[serde(default)]
    pub jacobian: Option<JacobianProvider>,
    /// JSON file holding the initial ensemble as a list of members. When
    /// absent, every trial draws its own ensemble from the prior.
    #[serde(default)]
    pub initial_ensemble: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(problem: ProblemSpec, method: MethodId, alpha: f64, n_iters: usize) -> Self {
        Self {
            problem,
            method,
            alpha,
            n_members: default_members(),
            n_iters: Some(n_iters),
            horizon: None,
            n_trials: default_trials(),
            base_seed: 0,
            rtol_pinv: None,
            jacobian: None,
            initial_ensemble: None,
            output_dir: None,
        }
    }

    /// Iteration count after reconciling `n_iters` with `horizon`.
    pub fn iterations(&self) -> Result<usize> {
        let from_horizon = match self.horizon {
            Some(t) => {
                if !(t >= 0.0 && t.is_finite()) {
                    return Err(Error::Config(format!("horizon must be non-negative, got {t}")));
                }
                Some((t / self.alpha).round() as usize)
            }
            None => None,
        };
        match (self.n_iters, from_horizon) {
            (Some(n), Some(h)) if n != h => Err(Error::Config(format!(
                "n_iters = {n} disagrees with horizon / alpha = {h}"
            ))),
            (Some(n), _) => Ok(n),
            (None, Some(h)) => Ok(h),
            (None, None) => Err(Error::Config("either n_iters or horizon is required".into())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.n_trials == 0 {
            return Err(Error::Config("n_trials must be at least 1".into()));
        }
        if self.method.is_ensemble() && self.n_members < 2 {
            return Err(Error::Config(format!("ensembles need at least 2 members, got {}", self.n_members)));
        }
        self.iterations()?;
        Ok(())
    }

    /// Copy with `n_iters` resolved and `horizon` cleared.
    pub fn resolved(&self) -> Result<Self> {
        self.validate()?;
        let mut c = self.clone();
        c.n_iters = Some(self.iterations()?);
        c.horizon = None;
        Ok(c)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
