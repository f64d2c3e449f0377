//! Ensembles, their empirical moments, and statistical linearization.
//!
//! Empirical covariances are normalized by `1/N`, not `1/(N−1)`:
//!
//! ```text
//! P^uu = 1/N Σ (u⁽ⁿ⁾ − m)(u⁽ⁿ⁾ − m)ᵀ,   P^uy = 1/N Σ (u⁽ⁿ⁾ − m)(h(u⁽ⁿ⁾) − h̄)ᵀ, ...
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{pseudo_inverse, pseudo_inverse_rect, sample_gaussian, symmetrize, Gaussian, SpdMatrix};

/// `d × N` collection of members, one per column.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    members: DMatrix<f64>,
}

impl Ensemble {
    pub fn new(members: DMatrix<f64>) -> Result<Self> {
        if members.ncols() < 2 {
            return Err(Error::Usage(format!("an ensemble needs at least 2 members, got {}", members.ncols())));
        }
        if members.iter().any(|x| !x.is_finite()) {
            return Err(Error::Usage("ensemble contains non-finite entries".into()));
        }
        Ok(Self { members })
    }

    /// `n` independent draws from `prior`.
    pub fn from_prior(prior: &Gaussian, n: usize, rng: &mut impl rand::Rng) -> Result<Self> {
        Self::new(sample_gaussian(prior, n, rng)?)
    }

    pub fn members(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn into_members(self) -> DMatrix<f64> {
        self.members
    }

    pub fn dim(&self) -> usize {
        self.members.nrows()
    }

    pub fn n_members(&self) -> usize {
        self.members.ncols()
    }

    pub fn member(&self, n: usize) -> DVector<f64> {
        self.members.column(n).into_owned()
    }

    pub fn mean(&self) -> DVector<f64> {
        column_mean(&self.members)
    }
}

pub(crate) fn column_mean(m: &DMatrix<f64>) -> DVector<f64> {
    let mut acc = DVector::zeros(m.nrows());
    for c in m.column_iter() {
        acc += c;
    }
    acc / m.ncols() as f64
}

pub(crate) fn anomalies(m: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut c in out.column_iter_mut() {
        c -= mean;
    }
    out
}

/// Empirical means and covariances of an ensemble and its image.
#[derive(Clone, Debug)]
pub struct EnsembleStats {
    pub mean_u: DVector<f64>,
    pub mean_h: DVector<f64>,
    pub p_uu: DMatrix<f64>,
    pub p_uy: DMatrix<f64>,
    pub p_yy: DMatrix<f64>,
    /// `u⁽ⁿ⁾ − m` as columns.
    pub u_anom: DMatrix<f64>,
    /// `h(u⁽ⁿ⁾) − h̄` as columns.
    pub y_anom: DMatrix<f64>,
}

/// Empirical statistics; column `n` of `h_evals` must be `h(u⁽ⁿ⁾)`.
pub fn compute_stats(ens: &Ensemble, h_evals: &DMatrix<f64>) -> Result<EnsembleStats> {
    let n = ens.n_members();
    if n < 2 {
        return Err(Error::Usage("statistics need at least 2 members".into()));
    }
    if h_evals.ncols() != n {
        return Err(Error::dim("compute_stats members", n, h_evals.ncols()));
    }
    let inv_n = 1.0 / n as f64;
    let mean_u = ens.mean();
    let mean_h = column_mean(h_evals);
    let u_anom = anomalies(ens.members(), &mean_u);
    let y_anom = anomalies(h_evals, &mean_h);
    let p_uu = symmetrize(&(&u_anom * u_anom.transpose() * inv_n));
    let p_uy = &u_anom * y_anom.transpose() * inv_n;
    let p_yy = symmetrize(&(&y_anom * y_anom.transpose() * inv_n));
    Ok(EnsembleStats {
        mean_u,
        mean_h,
        p_uu,
        p_uy,
        p_yy,
        u_anom,
        y_anom,
    })
}

/// `H_i = (P^uy)ᵀ (P^uu)⁺`: the least-squares linear fit of the centred
/// pairs `(u⁽ⁿ⁾, h(u⁽ⁿ⁾))`.
pub fn stat_linearize(stats: &EnsembleStats, rtol: f64) -> DMatrix<f64> {
    stats.p_uy.transpose() * pseudo_inverse(&stats.p_uu, rtol)
}

/// Same fit as [`stat_linearize`], computed from the anomalies as `Y U⁺`.
///
/// `(P^uy)ᵀ (P^uu)⁺ = Y Uᵀ (U Uᵀ)⁺ = Y U⁺`, and the singular-value cutoff
/// `σ² ≤ rtol σ²_max` is the eigenvalue cutoff of `P^uu`. Costs `O(d N²)`
/// instead of `O(d³)`, which matters when `d ≫ N`.
pub fn stat_linearize_anomalies(stats: &EnsembleStats, rtol: f64) -> DMatrix<f64> {
    &stats.y_anom * pseudo_inverse_rect(&stats.u_anom, rtol)
}

/// Tikhonov-augmented system: data `z = [y; m]`, noise `Q = diag(R, P)` and
/// forward evaluations `g(u) = [h(u); u]`.
#[derive(Clone, Debug)]
pub struct AugmentedSystem {
    pub z: DVector<f64>,
    pub q: SpdMatrix,
    pub g_evals: DMatrix<f64>,
}

/// Empirical statistics over `(u, g(u))`.
#[derive(Clone, Debug)]
pub struct AugmentedStats {
    pub mean_g: DVector<f64>,
    pub p_uz: DMatrix<f64>,
    pub p_zz: DMatrix<f64>,
}

pub fn augment(
    prior: &Gaussian,
    y: &DVector<f64>,
    r: &SpdMatrix,
    ens: &Ensemble,
    h_evals: &DMatrix<f64>,
) -> Result<(AugmentedSystem, AugmentedStats)> {
    let (d, k, n) = (prior.dim(), r.dim(), ens.n_members());
    if ens.dim() != d {
        return Err(Error::dim("augment ensemble", d, ens.dim()));
    }
    if y.len() != k {
        return Err(Error::dim("augment data", k, y.len()));
    }
    if h_evals.nrows() != k || h_evals.ncols() != n {
        return Err(Error::dim("augment evaluations", k, h_evals.nrows()));
    }
    let mut z = DVector::zeros(k + d);
    z.rows_mut(0, k).copy_from(y);
    z.rows_mut(k, d).copy_from(&prior.mean);
    let mut g_evals = DMatrix::zeros(k + d, n);
    g_evals.view_mut((0, 0), (k, n)).copy_from(h_evals);
    g_evals.view_mut((k, 0), (d, n)).copy_from(ens.members());
    let q = r.block_diag(&prior.cov);

    let inv_n = 1.0 / n as f64;
    let mean_g = column_mean(&g_evals);
    let g_anom = anomalies(&g_evals, &mean_g);
    let u_anom = anomalies(ens.members(), &ens.mean());
    let p_uz = &u_anom * g_anom.transpose() * inv_n;
    let p_zz = symmetrize(&(&g_anom * g_anom.transpose() * inv_n));
    Ok((AugmentedSystem { z, q, g_evals }, AugmentedStats { mean_g, p_uz, p_zz }))
}
