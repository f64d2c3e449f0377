//! Ensemble Kalman iterations.
//!
//! | id        | gain                                   | anchor / perturbation                  |
//! |-----------|----------------------------------------|----------------------------------------|
//! | `iekf`    | `P₀ᵘᵘHᵢᵀ(HᵢP₀ᵘᵘHᵢᵀ + R)⁻¹`              | initial members, `y ~ N(y, R/α)`        |
//! | `iekf-rzl`| fixed `C*`                             | initial members, `y ~ N(y, R/α)`        |
//! | `eki`     | `Pᵘʸ(Pʸʸ + R/α)⁻¹`                     | `y ~ N(y, R/α)`                         |
//! | `teki`    | `Pᵘᶻ(Pᶻᶻ + Q/α)⁻¹`                     | `z ~ N(z, Q/α)`                         |
//! | `iekf-sl` | `PHᵢᵀ(HᵢPHᵢᵀ + R)⁻¹`                   | `y ~ N(y, 2R/α)`, `m ~ N(m, 2P/α)`      |
//! | `eki-sl`  | `αPHᵢᵀ((1+α)HᵢPHᵢᵀ + R)⁻¹`             | `y ~ N(y, 2R/α)`                        |
//!
//! `Hᵢ` is the statistical linearization of the current ensemble. Each
//! iteration evaluates the forward map on all members, computes statistics,
//! linearizes, builds the gain, draws perturbations and then updates.
//! Perturbations are drawn from the trial generator in member order, so a
//! run is a pure function of its seed.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ensemble::{anomalies, column_mean, compute_stats, stat_linearize_anomalies, Ensemble};
use std::ops::{AddAssign, SubAssign};
use crate::error::{as_divergence, check_iterate, Error, Result};
use crate::linalg::{
    default_pinv_rtol, gain_from_cross, kalman_gain, pseudo_inverse, standard_normals, symmetrize,
};
use crate::problems::Problem;

/// Relative projection residual above which a member is considered to
/// have left the span of the initial ensemble.
pub const SUBSPACE_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsMethod {
    Iekf,
    IekfRzl,
    Eki,
    Teki,
    IekfSl,
    EkiSl,
}

impl EnsMethod {
    pub const ALL: [EnsMethod; 6] = [
        EnsMethod::Iekf,
        EnsMethod::IekfRzl,
        EnsMethod::Eki,
        EnsMethod::Teki,
        EnsMethod::IekfSl,
        EnsMethod::EkiSl,
    ];

    pub fn id(self) -> &'static str {
        match self {
            EnsMethod::Iekf => "iekf",
            EnsMethod::IekfRzl => "iekf-rzl",
            EnsMethod::Eki => "eki",
            EnsMethod::Teki => "teki",
            EnsMethod::IekfSl => "iekf-sl",
            EnsMethod::EkiSl => "eki-sl",
        }
    }

    /// Methods whose iterates stay in the span of the initial ensemble.
    pub fn preserves_initial_subspace(self) -> bool {
        matches!(self, EnsMethod::Iekf | EnsMethod::Eki | EnsMethod::Teki)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsMethodConfig {
    pub method: EnsMethod,
    pub alpha: f64,
    pub n_members: usize,
    pub max_iters: usize,
    /// Pseudoinverse cutoff for the linearization; `None` uses
    /// [`default_pinv_rtol`] of the parameter dimension.
    #[serde(default)]
    pub rtol_pinv: Option<f64>,
    /// Replace every perturbation draw by its mean. Test hook only.
    #[doc(hidden)]
    #[serde(skip)]
    pub suppress_noise: bool,
}

impl EnsMethodConfig {
    pub fn new(method: EnsMethod, alpha: f64, n_members: usize, max_iters: usize) -> Self {
        Self {
            method,
            alpha,
            n_members,
            max_iters,
            rtol_pinv: None,
            suppress_noise: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.n_members < 2 {
            return Err(Error::Config(format!("ensembles need at least 2 members, got {}", self.n_members)));
        }
        if let Some(r) = self.rtol_pinv {
            if !(r >= 0.0 && r < 1.0) {
                return Err(Error::Config(format!("rtol_pinv must lie in [0, 1), got {r}")));
            }
        }
        Ok(())
    }

    fn rtol(&self, d: usize) -> f64 {
        self.rtol_pinv.unwrap_or_else(|| default_pinv_rtol(d))
    }
}

/// Quantities fixed by the problem and the initial ensemble.
#[derive(Debug)]
struct Cache {
    chol_r: DMatrix<f64>,
    chol_p: DMatrix<f64>,
    /// `P₀ᵘᵘ` for IEKF and IEKF-RZL.
    p0_uu: Option<DMatrix<f64>>,
    /// `C*` and `(P₀ᵘᵘ)⁺` for IEKF-RZL.
    rzl: Option<(DMatrix<f64>, DMatrix<f64>)>,
    /// Orthonormal basis of the span of the initial members.
    basis: OnceLock<DMatrix<f64>>,
}

/// Iteration state: current and initial ensemble plus the iteration count.
#[derive(Debug)]
pub struct MethodState {
    current: Ensemble,
    initial: Ensemble,
    iter: usize,
    cache: Cache,
}

impl MethodState {
    pub fn new(problem: &Problem, initial: Ensemble, cfg: &EnsMethodConfig) -> Result<Self> {
        cfg.validate()?;
        if initial.dim() != problem.dim_u() {
            return Err(Error::dim("MethodState initial ensemble", problem.dim_u(), initial.dim()));
        }
        if initial.n_members() != cfg.n_members {
            return Err(Error::Config(format!(
                "initial ensemble has {} members, config asks for {}",
                initial.n_members(),
                cfg.n_members
            )));
        }
        let d = problem.dim_u();
        let needs_p0 = matches!(cfg.method, EnsMethod::Iekf | EnsMethod::IekfRzl);
        let (p0_uu, rzl) = if needs_p0 {
            let evals = problem.forward_columns(initial.members())?;
            let s = compute_stats(&initial, &evals)?;
            let rzl = if cfg.method == EnsMethod::IekfRzl {
                let inner = symmetrize(&(problem.noise.matrix() + &s.p_yy));
                let correction = gain_from_cross(&s.p_uy, &inner)? * s.p_uy.transpose();
                let c_star = symmetrize(&(&s.p_uu - correction));
                Some((c_star, pseudo_inverse(&s.p_uu, cfg.rtol(d))))
            } else {
                None
            };
            (Some(s.p_uu), rzl)
        } else {
            (None, None)
        };
        Ok(Self {
            current: initial.clone(),
            initial,
            iter: 0,
            cache: Cache {
                chol_r: problem.noise.cholesky_factor(),
                chol_p: problem.prior.cov.cholesky_factor(),
                p0_uu,
                rzl,
                basis: OnceLock::new(),
            },
        })
    }

    /// State whose initial ensemble is `cfg.n_members` prior draws.
    pub fn from_prior(problem: &Problem, cfg: &EnsMethodConfig, rng: &mut impl rand::Rng) -> Result<Self> {
        cfg.validate()?;
        let initial = Ensemble::from_prior(&problem.prior, cfg.n_members, rng)?;
        Self::new(problem, initial, cfg)
    }

    pub fn current(&self) -> &Ensemble {
        &self.current
    }

    pub fn initial(&self) -> &Ensemble {
        &self.initial
    }

    pub fn iter(&self) -> usize {
        self.iter
    }

    /// Computes the next ensemble without modifying the state.
    pub fn propose(&self, problem: &Problem, cfg: &EnsMethodConfig, rng: &mut impl rand::Rng) -> Result<Ensemble> {
        let next = self.iter + 1;
        let members = match cfg.method {
            EnsMethod::Iekf => iekf_update(self, problem, cfg, rng),
            EnsMethod::IekfRzl => iekf_rzl_update(self, problem, cfg, rng),
            EnsMethod::Eki => eki_update(self, problem, cfg, rng),
            EnsMethod::Teki => teki_update(self, problem, cfg, rng),
            EnsMethod::IekfSl => iekf_sl_update(self, problem, cfg, rng),
            EnsMethod::EkiSl => eki_sl_update(self, problem, cfg, rng),
        }
        .map_err(|e| as_divergence(e, cfg.method.id(), next))?;
        for c in members.column_iter() {
            check_iterate(cfg.method.id(), next, c.as_slice())?;
        }
        Ensemble::new(members)
    }

    /// Advances one iteration. On error the state is left unchanged.
    pub fn advance(&mut self, problem: &Problem, cfg: &EnsMethodConfig, rng: &mut impl rand::Rng) -> Result<()> {
        self.current = self.propose(problem, cfg, rng)?;
        self.iter += 1;
        Ok(())
    }

    /// Largest relative residual `|u − Πu| / |u|` of a current member
    /// after projection `Π` onto the span of the initial members.
    pub fn subspace_residual(&self) -> f64 {
        let basis = self.cache.basis.get_or_init(|| span_basis(self.initial.members()));
        self.current
            .members()
            .column_iter()
            .map(|u| {
                let norm = u.norm();
                if norm == 0.0 {
                    return 0.0;
                }
                let proj = basis * (basis.transpose() * u);
                (u - proj).norm() / norm
            })
            .fold(0.0, f64::max)
    }

    /// Whether every current member lies in the span of the initial members.
    pub fn subspace_check(&self) -> bool {
        self.subspace_residual() <= SUBSPACE_TOL
    }
}

fn span_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = m.clone().col_piv_qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..r.nrows().min(r.ncols())).map(|i| r[(i, i)].abs()).collect();
    let rmax = diag.iter().cloned().fold(0.0_f64, f64::max);
    let rank = diag.iter().take_while(|&&x| x > 1e-12 * rmax).count();
    qr.q().columns(0, rank).into_owned()
}

/// `n` columns `center + √scale · L ξ`, or `n` copies of `center` when noise
/// is suppressed.
fn perturbed(
    center: &DVector<f64>,
    chol: &DMatrix<f64>,
    scale: f64,
    n: usize,
    cfg: &EnsMethodConfig,
    rng: &mut impl rand::Rng,
) -> DMatrix<f64> {
    let mut out = if cfg.suppress_noise {
        DMatrix::zeros(center.len(), n)
    } else {
        chol * standard_normals(center.len(), n, rng) * scale.sqrt()
    };
    for mut c in out.column_iter_mut() {
        c += center;
    }
    out
}

fn linearize(state: &MethodState, problem: &Problem, cfg: &EnsMethodConfig) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let evals = problem.forward_columns(state.current.members())?;
    let stats = compute_stats(&state.current, &evals)?;
    let h = stat_linearize_anomalies(&stats, cfg.rtol(problem.dim_u()));
    Ok((evals, h))
}

fn iekf_update(state: &MethodState, problem: &Problem, cfg: &EnsMethodConfig, rng: &mut impl rand::Rng) -> Result<DMatrix<f64>> {
    let u = state.current.members();
    let (evals, h) = linearize(state, problem, cfg)?;
    let p0 = state.cache.p0_uu.as_ref().expect("IEKF state caches P0uu");
    let k = kalman_gain(p0, &h, &problem.noise)?;
    let y = perturbed(&problem.data, &state.cache.chol_r, 1.0 / cfg.alpha, u.ncols(), cfg, rng);
    let anchor = state.initial.members() - u;
    let step = k * (y - evals - &h * &anchor) + anchor;
    Ok(u + step * cfg.alpha)
}

fn iekf_rzl_update(state: &MethodState, problem: &Problem, cfg: &EnsMethodConfig, rng: &mut impl rand::Rng) -> Result<DMatrix<f64>> {
    let u = state.current.members();
    let (evals, h) = linearize(state, problem, cfg)?;
    let (c_star, p0_pinv) = state.cache.rzl.as_ref().expect("IEKF-RZL state caches C*");
    let y = perturbed(&problem.data, &state.cache.chol_r, 1.0 / cfg.alpha, u.ncols(), cfg, rng);
    let anchor = state.initial.members() - u;
    let grad = h.transpose() * problem.noise.solve_mat(&(y - evals)) + p0_pinv * anchor;
    Ok(u + c_star * grad * cfg.alpha)
}

fn eki_update(state: &MethodState, problem: &Problem, cfg: &EnsMethodConfig, rng: &mut impl rand::Rng) -> Result<DMatrix<f64>> {
    let u = state.current.members();
    let evals = problem.forward_columns(u)?;
    let s = compute_stats(&state.current, &evals)?;
    let k = gain_from_cross(&s.p_uy, &(&s.p_yy + problem.noise.matrix() / cfg.alpha))?;
    let y = perturbed(&problem.data, &state.cache.chol_r, 1.0 / cfg.alpha, u.ncols(), cfg, rng);
    Ok(u + k * (y - evals))
}

fn teki_update(state: &MethodState, problem: &Problem, cfg: &EnsMethodConfig, rng: &mut impl rand::Rng) -> Result<DMatrix<f64>> {
    let u = state.current.members();
    let (ky, d, n) = (problem.dim_y(), problem.dim_u(), u.ncols());
    let evals = problem.forward_columns(u)?;
    let mut targets = DMatrix::zeros(ky + d, n);
    if !cfg.suppress_noise {
        let xi = standard_normals(ky + d, n, rng) * (1.0 / cfg.alpha).sqrt();
        targets.view_mut((0, 0), (ky, n)).copy_from(&(&state.cache.chol_r * xi.rows(0, ky)));
        targets.view_mut((ky, 0), (d, n)).copy_from(&(&state.cache.chol_p * xi.rows(ky, d)));
    }
    for mut c in targets.column_iter_mut() {
        c.rows_mut(0, ky).add_assign(&problem.data);
        c.rows_mut(ky, d).add_assign(&problem.prior.mean);
    }
    targets.view_mut((0, 0), (ky, n)).sub_assign(&evals);
    targets.view_mut((ky, 0), (d, n)).sub_assign(u);
    Ok(u + teki_increment(problem, &state.current, &evals, &targets, cfg.alpha)?)
}

/// `Pᵘᶻ(Pᶻᶻ + Q/α)⁻¹ X`, solved in whichever of data space (`k + d`) or
/// ensemble space (`N`) is smaller. The ensemble-space form is
/// `U (N·I + GᵀA⁻¹G)⁻¹ GᵀA⁻¹X` with `A = Q/α` and `U`, `G` the anomalies.
fn teki_increment(
    problem: &Problem,
    ens: &Ensemble,
    evals: &DMatrix<f64>,
    x: &DMatrix<f64>,
    alpha: f64,
) -> Result<DMatrix<f64>> {
    let (ky, d, n) = (problem.dim_y(), problem.dim_u(), ens.n_members());
    let u_anom = anomalies(ens.members(), &ens.mean());
    let y_anom = anomalies(evals, &column_mean(evals));
    if n >= ky + d {
        let mut g_anom = DMatrix::zeros(ky + d, n);
        g_anom.view_mut((0, 0), (ky, n)).copy_from(&y_anom);
        g_anom.view_mut((ky, 0), (d, n)).copy_from(&u_anom);
        let q = problem.noise.block_diag(&problem.prior.cov);
        let s = &g_anom * g_anom.transpose() / n as f64 + q.matrix() / alpha;
        let chol = symmetrize(&s).cholesky().ok_or(Error::NotSpd("TEKI innovation covariance"))?;
        return Ok(u_anom * (g_anom.transpose() * chol.solve(x)) / n as f64);
    }
    let wy = problem.noise.solve_mat(&y_anom) * alpha;
    let wu = problem.prior.cov.solve_mat(&u_anom) * alpha;
    let mut inner = y_anom.transpose() * &wy + u_anom.transpose() * &wu;
    for i in 0..n {
        inner[(i, i)] += n as f64;
    }
    let rhs = wy.transpose() * x.rows(0, ky) + wu.transpose() * x.rows(ky, d);
    let chol = symmetrize(&inner)
        .cholesky()
        .ok_or(Error::NotSpd("ensemble-space TEKI system"))?;
    Ok(u_anom * chol.solve(&rhs))
}

fn iekf_sl_update(state: &MethodState, problem: &Problem, cfg: &EnsMethodConfig, rng: &mut impl rand::Rng) -> Result<DMatrix<f64>> {
    let u = state.current.members();
    let n = u.ncols();
    let (evals, h) = linearize(state, problem, cfg)?;
    let k = kalman_gain(problem.prior.cov.matrix(), &h, &problem.noise)?;
    let y = perturbed(&problem.data, &state.cache.chol_r, 2.0 / cfg.alpha, n, cfg, rng);
    let m = perturbed(&problem.prior.mean, &state.cache.chol_p, 2.0 / cfg.alpha, n, cfg, rng);
    let anchor = m - u;
    let step = k * (y - evals - &h * &anchor) + anchor;
    Ok(u + step * cfg.alpha)
}

fn eki_sl_update(state: &MethodState, problem: &Problem, cfg: &EnsMethodConfig, rng: &mut impl rand::Rng) -> Result<DMatrix<f64>> {
    let u = state.current.members();
    let (evals, h) = linearize(state, problem, cfg)?;
    let pht = problem.prior.cov.matrix() * h.transpose();
    let inner = &h * &pht * (1.0 + cfg.alpha) + problem.noise.matrix();
    let k = gain_from_cross(&pht, &inner)? * cfg.alpha;
    let y = perturbed(&problem.data, &state.cache.chol_r, 2.0 / cfg.alpha, u.ncols(), cfg, rng);
    Ok(u + k * (y - evals))
}

macro_rules! step_fn {
    ($(#[$doc:meta])* $name:ident, $method:expr) => {
        $(#[$doc])*
        pub fn $name(
            state: &MethodState,
            problem: &Problem,
            cfg: &EnsMethodConfig,
            rng: &mut impl rand::Rng,
        ) -> Result<Ensemble> {
            if cfg.method != $method {
                return Err(Error::Usage(format!("{} called with a {} config", $method.id(), cfg.method.id())));
            }
            state.propose(problem, cfg, rng)
        }
    };
}

step_fn!(
    /// One IEKF iteration.
    iekf_step,
    EnsMethod::Iekf
);
step_fn!(
    /// One IEKF-RZL iteration.
    iekf_rzl_step,
    EnsMethod::IekfRzl
);
step_fn!(
    /// One EKI iteration.
    eki_step,
    EnsMethod::Eki
);
step_fn!(
    /// One TEKI iteration.
    teki_step,
    EnsMethod::Teki
);
step_fn!(
    /// One IEKF-SL iteration.
    iekf_sl_step,
    EnsMethod::IekfSl
);
step_fn!(
    /// One EKI-SL iteration.
    eki_sl_step,
    EnsMethod::EkiSl
);
