//! Mean-field moment trajectories of the ensemble methods for linear `h`.
//!
//! With `A = HᵀR⁻¹H`, `C = (P⁻¹ + A)⁻¹` and `μ = C(HᵀR⁻¹y + P⁻¹m)`:
//!
//! ```text
//! EKI      𝔪′ = ℭHᵀR⁻¹(y − H𝔪)     ℭ′ = −ℭAℭ           ℭ(t)⁻¹ = ℭ(0)⁻¹ + tA
//! TEKI     same with (H, R, y) → (G, Q, z)
//! IEKF-SL  𝔪′ = −𝔪 + μ             ℭ′ = −2ℭ + 2C
//! EKI-SL   𝔪′ = CHᵀR⁻¹(y − H𝔪)     ℭ′ = −CAℭ − ℭAC + 2CAC
//! ```
//!
//! Every function here is pure.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{posterior_linear, symmetrize, Gaussian, SpdMatrix};
use crate::problems::Problem;

/// Moments sampled at increasing times.
#[derive(Clone, Debug, Default)]
pub struct MomentTrajectory {
    pub times: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

impl MomentTrajectory {
    /// Evaluates `moments` at every entry of `times`.
    pub fn sample(times: &[f64], mut moments: impl FnMut(f64) -> Result<(DVector<f64>, DMatrix<f64>)>) -> Result<Self> {
        let mut out = Self::default();
        for &t in times {
            let (m, c) = moments(t)?;
            out.times.push(t);
            out.means.push(m);
            out.covs.push(c);
        }
        Ok(out)
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Usage(format!("moment time must be finite and non-negative, got {t}")))
    }
}

fn check_linear(m0: &DVector<f64>, c0: &SpdMatrix, h: &DMatrix<f64>, r: &SpdMatrix, y: &DVector<f64>) -> Result<()> {
    let d = c0.dim();
    if m0.len() != d {
        return Err(Error::dim("oracle initial mean", d, m0.len()));
    }
    if h.ncols() != d {
        return Err(Error::dim("oracle H columns", d, h.ncols()));
    }
    if h.nrows() != r.dim() {
        return Err(Error::dim("oracle H rows", r.dim(), h.nrows()));
    }
    if y.len() != r.dim() {
        return Err(Error::dim("oracle data", r.dim(), y.len()));
    }
    Ok(())
}

/// EKI moments `𝔪(t) = (C₀⁻¹ + tA)⁻¹(C₀⁻¹m₀ + tHᵀR⁻¹y)`, `ℭ(t) = (C₀⁻¹ + tA)⁻¹`.
pub fn eki_moments(
    t: f64,
    m0: &DVector<f64>,
    c0: &SpdMatrix,
    h: &DMatrix<f64>,
    r: &SpdMatrix,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_time(t)?;
    check_linear(m0, c0, h, r, y)?;
    let rinv_h = r.solve_mat(h);
    let lambda = SpdMatrix::new(c0.precision() + h.transpose() * &rinv_h * t)?;
    let rhs = c0.solve_vec(m0) + h.transpose() * r.solve_vec(y) * t;
    Ok((lambda.solve_vec(&rhs), lambda.precision()))
}

/// The augmented system `G = [H; I]`, `Q = diag(R, P)`, `z = [y; m]`.
pub fn augmented_linear(h: &DMatrix<f64>, r: &SpdMatrix, prior: &Gaussian, y: &DVector<f64>) -> (DMatrix<f64>, SpdMatrix, DVector<f64>) {
    let (k, d) = h.shape();
    let mut g = DMatrix::zeros(k + d, d);
    g.view_mut((0, 0), (k, d)).copy_from(h);
    g.view_mut((k, 0), (d, d)).fill_with_identity();
    let mut z = DVector::zeros(k + d);
    z.rows_mut(0, k).copy_from(y);
    z.rows_mut(k, d).copy_from(&prior.mean);
    (g, r.block_diag(&prior.cov), z)
}

/// TEKI moments: [`eki_moments`] for the augmented system.
pub fn teki_moments(
    t: f64,
    m0: &DVector<f64>,
    c0: &SpdMatrix,
    h: &DMatrix<f64>,
    r: &SpdMatrix,
    prior: &Gaussian,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_linear(m0, c0, h, r, y)?;
    if prior.dim() != c0.dim() {
        return Err(Error::dim("teki_moments prior", c0.dim(), prior.dim()));
    }
    let (g, q, z) = augmented_linear(h, r, prior, y);
    eki_moments(t, m0, c0, &g, &q, &z)
}

/// IEKF-SL moments `𝔪(t) = e⁻ᵗm₀ + (1 − e⁻ᵗ)μ`, `ℭ(t) = e⁻²ᵗC₀ + (1 − e⁻²ᵗ)C`.
pub fn iekf_sl_moments(
    t: f64,
    m0: &DVector<f64>,
    c0: &SpdMatrix,
    h: &DMatrix<f64>,
    r: &SpdMatrix,
    prior: &Gaussian,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_time(t)?;
    check_linear(m0, c0, h, r, y)?;
    let post = posterior_linear(h, r, prior, y)?;
    let (a, b) = ((-t).exp(), (-2.0 * t).exp());
    let mean = m0 * a + &post.mean * (1.0 - a);
    let cov = c0.matrix() * b + post.cov.matrix() * (1.0 - b);
    Ok((mean, symmetrize(&cov)))
}

/// Absolute and relative tolerance of the EKI-SL covariance integration.
pub const EKI_SL_ODE_TOL: f64 = 1e-10;

/// EKI-SL moments. The mean solves a linear ODE in closed form through a
/// matrix exponential; the covariance is integrated numerically with an
/// adaptive Dormand-Prince 5(4) scheme at tolerance [`EKI_SL_ODE_TOL`].
pub fn eki_sl_moments(
    t: f64,
    m0: &DVector<f64>,
    c0: &SpdMatrix,
    h: &DMatrix<f64>,
    r: &SpdMatrix,
    p: &SpdMatrix,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_time(t)?;
    check_linear(m0, c0, h, r, y)?;
    if p.dim() != c0.dim() {
        return Err(Error::dim("eki_sl_moments prior covariance", c0.dim(), p.dim()));
    }
    let d = c0.dim();
    let a = h.transpose() * r.solve_mat(h);
    let c = SpdMatrix::new(p.precision() + &a)?.precision();
    let b = &c * h.transpose() * r.solve_vec(y);
    let ca = &c * &a;

    // 𝔪′ = −CA𝔪 + b as the homogeneous system [𝔪; 1]′ = [[−CA, b], [0, 0]] [𝔪; 1].
    let mut gen = DMatrix::zeros(d + 1, d + 1);
    gen.view_mut((0, 0), (d, d)).copy_from(&(-&ca * t));
    gen.view_mut((0, d), (d, 1)).copy_from(&(&b * t));
    let mut x0 = DVector::zeros(d + 1);
    x0.rows_mut(0, d).copy_from(m0);
    x0[d] = 1.0;
    let mean = (gen.exp() * x0).rows(0, d).into_owned();

    let forcing = symmetrize(&(&ca * &c * 2.0));
    let rhs = |_: f64, x: &DVector<f64>| {
        let cc = DMatrix::from_column_slice(d, d, x.as_slice());
        let dx = -&ca * &cc - &cc * ca.transpose() + &forcing;
        DVector::from_column_slice(dx.as_slice())
    };
    let x = dopri5(rhs, 0.0, t, DVector::from_column_slice(c0.matrix().as_slice()), EKI_SL_ODE_TOL)?;
    let cov = symmetrize(&DMatrix::from_column_slice(d, d, x.as_slice()));
    Ok((mean, cov))
}

/// Integrates `x′ = f(t, x)` from `t0` to `t1` with the Dormand-Prince 5(4)
/// pair and standard step-size control (mixed absolute/relative tolerance
/// `tol`).
pub fn dopri5(
    f: impl Fn(f64, &DVector<f64>) -> DVector<f64>,
    t0: f64,
    t1: f64,
    x0: DVector<f64>,
    tol: f64,
) -> Result<DVector<f64>> {
    const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    // Fifth-order weights are the last row of A; these are the fourth-order ones.
    const E4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    if !(t1 >= t0) {
        return Err(Error::Usage("dopri5 integrates forward in time only".into()));
    }
    let mut t = t0;
    let mut x = x0;
    if t1 == t0 {
        return Ok(x);
    }
    let mut h = ((t1 - t0) * 1e-3).min(0.01).max(1e-12);
    let mut k1 = f(t, &x);
    let mut steps = 0usize;
    while t < t1 {
        steps += 1;
        if steps > 10_000_000 {
            return Err(Error::Usage("dopri5 exceeded its step budget".into()));
        }
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        let mut k = vec![k1.clone()];
        for s in 1..7 {
            let mut xs = x.clone();
            for (j, kj) in k.iter().enumerate() {
                if A[s][j] != 0.0 {
                    xs.axpy(h * A[s][j], kj, 1.0);
                }
            }
            k.push(f(t + C[s] * h, &xs));
        }
        // The stage-7 input is the fifth-order solution (first same as last).
        let mut x5 = x.clone();
        for (j, kj) in k.iter().take(6).enumerate() {
            x5.axpy(h * A[6][j], kj, 1.0);
        }
        let mut x4 = x.clone();
        for (j, kj) in k.iter().enumerate() {
            x4.axpy(h * E4[j], kj, 1.0);
        }
        let err = x5
            .iter()
            .zip(x4.iter())
            .zip(x.iter())
            .map(|((a, b), c)| {
                let sc = tol + tol * a.abs().max(c.abs());
                ((a - b) / sc).powi(2)
            })
            .sum::<f64>()
            / x.len().max(1) as f64;
        let err = err.sqrt();
        if !err.is_finite() {
            return Err(Error::Usage("dopri5 produced a non-finite state".into()));
        }
        if err <= 1.0 {
            t = if last { t1 } else { t + h };
            x = x5;
            k1 = k.pop().expect("seven stages");
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    Ok(x)
}

/// Posterior mean and covariance of a linear problem (`h(u) = Hu`).
pub fn posterior_fixed_point(problem: &Problem) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let m = &problem.prior.mean;
    let h = problem
        .model()
        .jacobian(m)
        .ok_or_else(|| Error::Usage(format!("{} has no Jacobian", problem.name)))?;
    let hm = problem.forward(m)?;
    let lin = &h * m;
    if (&hm - &lin).norm() > 1e-10 * lin.norm().max(1.0) {
        return Err(Error::Usage(format!("{} is not linear", problem.name)));
    }
    let post = posterior_linear(&h, &problem.noise, &problem.prior, &problem.data)?;
    Ok((post.mean, post.cov.matrix().clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{rel_frobenius, standard_normals};
    use crate::problems::{elliptic2d, linear_gaussian};
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;

    struct Toy {
        h: DMatrix<f64>,
        r: SpdMatrix,
        prior: Gaussian,
        y: DVector<f64>,
        m0: DVector<f64>,
        c0: SpdMatrix,
    }

    fn spd(d: usize, rng: &mut impl rand::Rng) -> SpdMatrix {
        let a = standard_normals(d, d, rng);
        SpdMatrix::new(&a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.5).unwrap()
    }

    fn toy(d: usize, k: usize, seed: u64) -> Toy {
        let mut rng = rng_from_seed(seed);
        let h = standard_normals(k, d, &mut rng);
        let r = spd(k, &mut rng);
        let prior = Gaussian::new(standard_normals(d, 1, &mut rng).column(0).into_owned(), spd(d, &mut rng)).unwrap();
        let y = standard_normals(k, 1, &mut rng).column(0).into_owned();
        let m0 = standard_normals(d, 1, &mut rng).column(0).into_owned();
        let c0 = spd(d, &mut rng);
        Toy { h, r, prior, y, m0, c0 }
    }

    fn inv(m: &DMatrix<f64>) -> DMatrix<f64> {
        m.clone().try_inverse().unwrap()
    }

    #[test]
    fn all_start_at_initial_moments() {
        let s = toy(3, 2, 1);
        let p = &s.prior;
        let cases = [
            eki_moments(0.0, &s.m0, &s.c0, &s.h, &s.r, &s.y).unwrap(),
            teki_moments(0.0, &s.m0, &s.c0, &s.h, &s.r, p, &s.y).unwrap(),
            iekf_sl_moments(0.0, &s.m0, &s.c0, &s.h, &s.r, p, &s.y).unwrap(),
            eki_sl_moments(0.0, &s.m0, &s.c0, &s.h, &s.r, &p.cov, &s.y).unwrap(),
        ];
        for (m, c) in cases {
            assert!((m - &s.m0).amax() <= 1e-12);
            assert!((c - s.c0.matrix()).amax() <= 1e-12);
        }
        assert!(eki_moments(-1.0, &s.m0, &s.c0, &s.h, &s.r, &s.y).is_err());
    }

    #[test]
    fn eki_long_time_limit_is_least_squares() {
        let s = toy(2, 4, 2);
        let a = s.h.transpose() * inv(s.r.matrix()) * &s.h;
        let ls = inv(&a) * s.h.transpose() * inv(s.r.matrix()) * &s.y;
        let (m, c) = eki_moments(1e9, &s.m0, &s.c0, &s.h, &s.r, &s.y).unwrap();
        assert!((m - ls).amax() <= 1e-6);
        assert!(c.amax() <= 1e-8);
    }

    #[test]
    fn eki_at_unit_time_from_prior_is_posterior() {
        let s = toy(3, 2, 3);
        let (m, c) = eki_moments(1.0, &s.prior.mean, &s.prior.cov, &s.h, &s.r, &s.y).unwrap();
        let post = posterior_linear(&s.h, &s.r, &s.prior, &s.y).unwrap();
        assert!((m - post.mean).amax() <= 1e-10);
        assert!(rel_frobenius(&c, post.cov.matrix()) <= 1e-10);
    }

    #[test]
    fn eki_satisfies_its_odes() {
        let s = toy(3, 3, 4);
        let rinv = inv(s.r.matrix());
        let a = s.h.transpose() * &rinv * &s.h;
        let eps = 1e-5;
        for t in [0.1, 0.7, 2.0, 5.0] {
            let (mp, cp) = eki_moments(t + eps, &s.m0, &s.c0, &s.h, &s.r, &s.y).unwrap();
            let (mm, cm) = eki_moments(t - eps, &s.m0, &s.c0, &s.h, &s.r, &s.y).unwrap();
            let (m, c) = eki_moments(t, &s.m0, &s.c0, &s.h, &s.r, &s.y).unwrap();
            let dm = (mp - mm) / (2.0 * eps);
            let dc = (cp - cm) / (2.0 * eps);
            let rhs_m = &c * s.h.transpose() * &rinv * (&s.y - &s.h * &m);
            let rhs_c = -(&c * &a * &c);
            assert!((&dm - &rhs_m).norm() <= 1e-6 * rhs_m.norm().max(1.0));
            assert!((&dc - &rhs_c).norm() <= 1e-6 * rhs_c.norm().max(1.0));
        }
    }

    #[test]
    fn teki_limit_is_posterior_mean() {
        let s = toy(3, 2, 5);
        let (m, c) = teki_moments(1e9, &s.m0, &s.c0, &s.h, &s.r, &s.prior, &s.y).unwrap();
        let post = posterior_linear(&s.h, &s.r, &s.prior, &s.y).unwrap();
        assert!((m - post.mean).amax() <= 1e-6);
        assert!(c.amax() <= 1e-8);
    }

    #[test]
    fn iekf_sl_limits_and_half_life() {
        let s = toy(3, 2, 6);
        let post = posterior_linear(&s.h, &s.r, &s.prior, &s.y).unwrap();
        let (m, c) = iekf_sl_moments(60.0, &s.m0, &s.c0, &s.h, &s.r, &s.prior, &s.y).unwrap();
        assert!((m - &post.mean).amax() <= 1e-12);
        assert!((c - post.cov.matrix()).amax() <= 1e-12);
        let (m, _) = iekf_sl_moments(2f64.ln(), &s.m0, &s.c0, &s.h, &s.r, &s.prior, &s.y).unwrap();
        assert!((m - (&s.m0 + &post.mean) / 2.0).amax() <= 1e-12);
    }

    #[test]
    fn iekf_sl_matches_rk4_of_its_odes() {
        let s = toy(2, 2, 7);
        let post = posterior_linear(&s.h, &s.r, &s.prior, &s.y).unwrap();
        let (mut m, mut c) = (s.m0.clone(), s.c0.matrix().clone());
        let dt = 1e-3;
        for _ in 0..1500 {
            let fm = |x: &DVector<f64>| -x + &post.mean;
            let fc = |x: &DMatrix<f64>| (post.cov.matrix() - x) * 2.0;
            let (a1, b1) = (fm(&m), fc(&c));
            let (a2, b2) = (fm(&(&m + &a1 * (dt / 2.0))), fc(&(&c + &b1 * (dt / 2.0))));
            let (a3, b3) = (fm(&(&m + &a2 * (dt / 2.0))), fc(&(&c + &b2 * (dt / 2.0))));
            let (a4, b4) = (fm(&(&m + &a3 * dt)), fc(&(&c + &b3 * dt)));
            m += (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (dt / 6.0);
            c += (b1 + b2 * 2.0 + b3 * 2.0 + b4) * (dt / 6.0);
        }
        let (om, oc) = iekf_sl_moments(1.5, &s.m0, &s.c0, &s.h, &s.r, &s.prior, &s.y).unwrap();
        assert!((om - m).amax() <= 1e-10);
        assert!((oc - c).amax() <= 1e-10);
    }

    fn eki_sl_closed_form(t: f64, s: &Toy) -> DMatrix<f64> {
        // ℭ − C solves D′ = −CA D − D AC, so D(t) = e^{−CAt} D(0) e^{−ACt}.
        let a = s.h.transpose() * inv(s.r.matrix()) * &s.h;
        let c = inv(&(inv(s.prior.cov.matrix()) + &a));
        let e = (-(&c * &a) * t).exp();
        &e * (s.c0.matrix() - &c) * e.transpose() + c
    }

    #[test]
    fn eki_sl_covariance_matches_closed_form() {
        let s = toy(3, 3, 8);
        for t in [0.3, 1.0, 4.0] {
            let (_, c) = eki_sl_moments(t, &s.m0, &s.c0, &s.h, &s.r, &s.prior.cov, &s.y).unwrap();
            assert!(rel_frobenius(&c, &eki_sl_closed_form(t, &s)) <= 1e-8);
        }
    }

    #[test]
    fn eki_sl_mean_satisfies_its_ode() {
        let s = toy(3, 2, 9);
        let rinv = inv(s.r.matrix());
        let a = s.h.transpose() * &rinv * &s.h;
        let c = inv(&(inv(s.prior.cov.matrix()) + &a));
        let eps = 1e-5;
        for t in [0.2, 1.5] {
            let m = |t| eki_sl_moments(t, &s.m0, &s.c0, &s.h, &s.r, &s.prior.cov, &s.y).unwrap().0;
            let dm = (m(t + eps) - m(t - eps)) / (2.0 * eps);
            let rhs = &c * s.h.transpose() * &rinv * (&s.y - &s.h * m(t));
            assert!((&dm - &rhs).norm() <= 1e-6 * rhs.norm().max(1.0));
        }
    }

    #[test]
    fn eki_sl_limits() {
        // Full column rank: mean to least squares, covariance to C.
        let s = toy(2, 3, 10);
        let rinv = inv(s.r.matrix());
        let a = s.h.transpose() * &rinv * &s.h;
        let c = inv(&(inv(s.prior.cov.matrix()) + &a));
        let ls = inv(&a) * s.h.transpose() * &rinv * &s.y;
        let (m, cov) = eki_sl_moments(200.0, &s.m0, &s.c0, &s.h, &s.r, &s.prior.cov, &s.y).unwrap();
        assert!((m - ls).amax() <= 1e-8);
        assert!(rel_frobenius(&cov, &c) <= 1e-8);
        // Full row rank: data reproduced.
        let s = toy(4, 2, 11);
        let (m, _) = eki_sl_moments(400.0, &s.m0, &s.c0, &s.h, &s.r, &s.prior.cov, &s.y).unwrap();
        assert!((&s.h * m - &s.y).amax() <= 1e-8);
    }

    #[test]
    fn eki_sl_posterior_covariance_is_stationary() {
        let s = toy(4, 3, 12);
        let a = s.h.transpose() * inv(s.r.matrix()) * &s.h;
        let c = inv(&(inv(s.prior.cov.matrix()) + &a));
        let resid = -(&c * &a * &c) - &c * &a * &c + &c * &a * &c * 2.0;
        assert!(resid.amax() <= 1e-12);
    }

    #[test]
    fn dopri5_solves_scalar_exponential() {
        let x = dopri5(|_, x| -x, 0.0, 3.0, DVector::from_element(1, 2.0), 1e-10).unwrap();
        assert!((x[0] - 2.0 * (-3.0f64).exp()).abs() <= 1e-9);
        let x = dopri5(|t, _| DVector::from_element(1, t.cos()), 0.0, 1.0, DVector::zeros(1), 1e-10).unwrap();
        assert!((x[0] - 1f64.sin()).abs() <= 1e-9);
    }

    #[test]
    fn fixed_point_examples() {
        let prior = Gaussian::new(DVector::zeros(2), SpdMatrix::identity(2)).unwrap();
        let y = DVector::from_vec(vec![1.0, -3.0]);
        let p = Problem::linear(DMatrix::identity(2, 2), SpdMatrix::identity(2), prior.clone(), y.clone(), None).unwrap();
        let (mu, c) = posterior_fixed_point(&p).unwrap();
        assert!((mu - &y / 2.0).amax() <= 1e-14);
        assert!((c - DMatrix::identity(2, 2) / 2.0).amax() <= 1e-14);

        let m = DVector::from_vec(vec![0.3, 0.4]);
        let prior = Gaussian::new(m.clone(), SpdMatrix::from_diagonal(&[2.0, 3.0]).unwrap()).unwrap();
        let p = Problem::linear(DMatrix::zeros(2, 2), SpdMatrix::identity(2), prior.clone(), y, None).unwrap();
        let (mu, c) = posterior_fixed_point(&p).unwrap();
        assert!((mu - m).amax() <= 1e-14);
        assert!((c - prior.cov.matrix()).amax() <= 1e-14);

        let p = linear_gaussian(5, 3, 13).unwrap();
        let (mu, c) = posterior_fixed_point(&p).unwrap();
        let h = p.model().jacobian(&mu).unwrap();
        let prec = h.transpose() * inv(p.noise.matrix()) * &h + inv(p.prior.cov.matrix());
        let brute_c = inv(&prec);
        let brute_mu = &brute_c * (h.transpose() * inv(p.noise.matrix()) * &p.data + inv(p.prior.cov.matrix()) * &p.prior.mean);
        assert!((mu - brute_mu).amax() <= 1e-10);
        assert!(rel_frobenius(&c, &brute_c) <= 1e-10);

        assert!(posterior_fixed_point(&elliptic2d().unwrap()).is_err());
    }

    #[test]
    fn trajectory_sampling() {
        let s = toy(2, 2, 14);
        let traj = MomentTrajectory::sample(&[0.0, 0.5, 1.0], |t| eki_moments(t, &s.m0, &s.c0, &s.h, &s.r, &s.y)).unwrap();
        assert_eq!(traj.times, vec![0.0, 0.5, 1.0]);
        assert_eq!(traj.means.len(), 3);
        for c in &traj.covs {
            assert!((c - c.transpose()).amax() <= 1e-10);
            assert!(c.clone().symmetric_eigen().eigenvalues.min() >= -1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn eki_inverse_covariance_is_affine(seed in any::<u64>(), t in 0.0f64..20.0) {
            let s = toy(3, 2, seed);
            let (_, c) = eki_moments(t, &s.m0, &s.c0, &s.h, &s.r, &s.y).unwrap();
            let a = s.h.transpose() * inv(s.r.matrix()) * &s.h;
            let lhs = inv(&c) - inv(s.c0.matrix());
            prop_assert!((lhs - a * t).norm() <= 1e-9 * (1.0 + t));
        }

        #[test]
        fn augmented_precision_identity(seed in any::<u64>()) {
            let s = toy(4, 3, seed);
            let (g, q, _) = augmented_linear(&s.h, &s.r, &s.prior, &s.y);
            let lhs = g.transpose() * q.solve_mat(&g);
            let rhs = s.h.transpose() * s.r.solve_mat(&s.h) + s.prior.cov.precision();
            prop_assert!((&lhs - &rhs).amax() <= 1e-12 * rhs.amax().max(1.0));
        }

        #[test]
        fn iekf_sl_covariance_stays_between_endpoints(seed in any::<u64>(), t in 0.0f64..5.0) {
            let s = toy(3, 2, seed);
            let (_, c) = iekf_sl_moments(t, &s.m0, &s.c0, &s.h, &s.r, &s.prior, &s.y).unwrap();
            let post = posterior_linear(&s.h, &s.r, &s.prior, &s.y).unwrap();
            let eig = |m: &DMatrix<f64>| m.clone().symmetric_eigen().eigenvalues;
            let (e0, e1, et) = (eig(s.c0.matrix()), eig(post.cov.matrix()), eig(&c));
            let lo = e0.min().min(e1.min());
            let hi = e0.max().max(e1.max());
            prop_assert!(et.min() >= lo - 1e-12 && et.max() <= hi + 1e-12);
        }
    }
}
