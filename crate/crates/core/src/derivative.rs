//! Derivative-based iterations: IExKF, ILM-DM and ILM-TP.
//!
//! All three start from the prior mean and use a fixed step length `α`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{as_divergence, check_iterate, Error, Result};
use crate::linalg::kalman_gain;
use crate::problems::{fd_jacobian, Problem};

/// Source of `H_i = h′(u_i)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum JacobianProvider {
    Analytic,
    /// Central differences with step `rel_step · (1 + |u_j|)`.
    CentralDifference { rel_step: f64 },
}

impl Default for JacobianProvider {
    fn default() -> Self {
        JacobianProvider::CentralDifference { rel_step: 1e-6 }
    }
}

impl JacobianProvider {
    /// Analytic when the model has a Jacobian, finite differences otherwise.
    pub fn for_problem(problem: &Problem) -> Self {
        let probe = problem.prior.mean.clone();
        if problem.model().jacobian(&probe).is_some() {
            JacobianProvider::Analytic
        } else {
            JacobianProvider::default()
        }
    }

    pub fn jacobian(&self, problem: &Problem, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        match *self {
            JacobianProvider::Analytic => problem
                .model()
                .jacobian(u)
                .ok_or_else(|| Error::Config(format!("{} has no analytic Jacobian", problem.name))),
            JacobianProvider::CentralDifference { rel_step } => {
                if !(rel_step > 0.0) {
                    return Err(Error::Config("finite-difference step must be positive".into()));
                }
                fd_jacobian(problem, u, rel_step)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivMethod {
    Iexkf,
    IlmDm,
    IlmTp,
}

impl DerivMethod {
    pub const ALL: [DerivMethod; 3] = [DerivMethod::Iexkf, DerivMethod::IlmDm, DerivMethod::IlmTp];

    pub fn id(self) -> &'static str {
        match self {
            DerivMethod::Iexkf => "iexkf",
            DerivMethod::IlmDm => "ilm-dm",
            DerivMethod::IlmTp => "ilm-tp",
        }
    }

    pub fn step(self, u: &DVector<f64>, problem: &Problem, jac: &JacobianProvider, alpha: f64) -> Result<DVector<f64>> {
        match self {
            DerivMethod::Iexkf => iexkf_step(u, problem, jac, alpha),
            DerivMethod::IlmDm => ilm_dm_step(u, problem, jac, alpha),
            DerivMethod::IlmTp => ilm_tp_step(u, problem, jac, alpha),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivMethodConfig {
    pub alpha: f64,
    pub max_iters: usize,
}

impl DerivMethodConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    DerivMethodConfig { alpha, max_iters: 0 }.validate()
}

/// `u + α{K(y − h(u)) + (I − KH)(m − u)}` with `K = PHᵀ(HPHᵀ + R)⁻¹`.
pub fn iexkf_step(u: &DVector<f64>, problem: &Problem, jac: &JacobianProvider, alpha: f64) -> Result<DVector<f64>> {
    check_alpha(alpha)?;
    let h = jac.jacobian(problem, u)?;
    let hu = problem.forward(u)?;
    let k = kalman_gain(problem.prior.cov.matrix(), &h, &problem.noise)?;
    let to_prior = &problem.prior.mean - u;
    let innovation = &problem.data - hu - &h * &to_prior;
    Ok(u + (k * innovation + to_prior) * alpha)
}

/// `u + K(y − h(u))` with `K = αPHᵀ(αHPHᵀ + R)⁻¹`.
pub fn ilm_dm_step(u: &DVector<f64>, problem: &Problem, jac: &JacobianProvider, alpha: f64) -> Result<DVector<f64>> {
    check_alpha(alpha)?;
    let h = jac.jacobian(problem, u)?;
    let hu = problem.forward(u)?;
    let k = kalman_gain(&(problem.prior.cov.matrix() * alpha), &h, &problem.noise)?;
    Ok(u + k * (&problem.data - hu))
}

/// `u + K(z − g(u))` with `z = [y; m]`, `g(u) = [h(u); u]`, `G = [H; I]`,
/// `Q = diag(R, P)` and `K = αPGᵀ(αGPGᵀ + Q)⁻¹`.
pub fn ilm_tp_step(u: &DVector<f64>, problem: &Problem, jac: &JacobianProvider, alpha: f64) -> Result<DVector<f64>> {
    check_alpha(alpha)?;
    let (d, k) = (problem.dim_u(), problem.dim_y());
    let h = jac.jacobian(problem, u)?;
    let hu = problem.forward(u)?;
    let mut g = DMatrix::zeros(k + d, d);
    g.view_mut((0, 0), (k, d)).copy_from(&h);
    g.view_mut((k, 0), (d, d)).fill_with_identity();
    let mut resid = DVector::zeros(k + d);
    resid.rows_mut(0, k).copy_from(&(&problem.data - hu));
    resid.rows_mut(k, d).copy_from(&(&problem.prior.mean - u));
    let q = problem.noise.block_diag(&problem.prior.cov);
    let gain = kalman_gain(&(problem.prior.cov.matrix() * alpha), &g, &q)?;
    Ok(u + gain * resid)
}

/// Runs `iters` steps from the prior mean, calling `observe(i, u_i)` for
/// `i = 0..=iters`. Forward failures and blow-up become divergence errors
/// tagged with the iteration that produced them.
pub fn run_derivative(
    method: DerivMethod,
    problem: &Problem,
    jac: &JacobianProvider,
    cfg: &DerivMethodConfig,
    mut observe: impl FnMut(usize, &DVector<f64>) -> Result<()>,
) -> Result<DVector<f64>> {
    cfg.validate()?;
    let mut u = problem.prior.mean.clone();
    observe(0, &u)?;
    for i in 1..=cfg.max_iters {
        u = method
            .step(&u, problem, jac, cfg.alpha)
            .map_err(|e| as_divergence(e, method.id(), i))?;
        check_iterate(method.id(), i, u.as_slice())?;
        observe(i, &u)?;
    }
    Ok(u)
}
