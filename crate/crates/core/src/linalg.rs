//! Dense symmetric positive definite algebra and the linear-Gaussian
//! posterior.
//!
//! Nothing in here forms an explicit inverse of a covariance that is used
//! downstream: weighted norms and gains go through Cholesky solves, and
//! pseudoinverses through a symmetric eigendecomposition. Every covariance
//! produced by an arithmetic update is re-symmetrized.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Symmetric positive definite matrix with a cached Cholesky factor.
#[derive(Clone, Debug)]
pub struct SpdMatrix {
    mat: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl SpdMatrix {
    /// Symmetrizes `m` and factors it; fails if a pivot is not positive.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::dim("SpdMatrix::new", m.nrows(), m.ncols()));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NotSpd("non-finite entry"));
        }
        let mat = symmetrize(&m);
        let chol = Cholesky::new(mat.clone()).ok_or(Error::NotSpd("cholesky pivot <= 0"))?;
        Ok(Self { mat, chol })
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim)).expect("identity is SPD")
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// `s * self` for `s > 0`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        if !(s > 0.0) {
            return Err(Error::Usage(format!("SPD scaling factor must be positive, got {s}")));
        }
        Self::new(&self.mat * s)
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    /// Lower-triangular factor `L` with `L Lᵀ = self`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Solves `self · x = b`.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// Solves `self · X = B`.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `self⁻¹` through the factorization; only for small precision-form
    /// computations (oracles and tests).
    pub fn precision(&self) -> DMatrix<f64> {
        symmetrize(&self.chol.inverse())
    }

    /// Block diagonal `[self 0; 0 other]`.
    pub fn block_diag(&self, other: &SpdMatrix) -> SpdMatrix {
        let (a, b) = (self.dim(), other.dim());
        let mut m = DMatrix::zeros(a + b, a + b);
        m.view_mut((0, 0), (a, a)).copy_from(&self.mat);
        m.view_mut((a, a), (b, b)).copy_from(&other.mat);
        SpdMatrix::new(m).expect("block diagonal of SPD blocks is SPD")
    }
}

/// Multivariate normal `N(mean, cov)`.
#[derive(Clone, Debug)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: SpdMatrix,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: SpdMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::dim("Gaussian::new", cov.dim(), mean.len()));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Mean, covariance and gain of the linear-Gaussian posterior.
#[derive(Clone, Debug)]
pub struct PosteriorResult {
    pub mean: DVector<f64>,
    pub cov: SpdMatrix,
    pub gain: DMatrix<f64>,
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `‖a − b‖_F / ‖b‖_F`, falling back to the absolute difference when `b = 0`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// `|v|²_A = vᵀ A⁻¹ v`.
pub fn mahalanobis_sqnorm(v: &DVector<f64>, a: &SpdMatrix) -> Result<f64> {
    if v.len() != a.dim() {
        return Err(Error::dim("mahalanobis_sqnorm", a.dim(), v.len()));
    }
    Ok(v.dot(&a.solve_vec(v)).max(0.0))
}

/// `rows × cols` matrix of i.i.d. standard normals, drawn column by column.
pub fn standard_normals(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for x in m.iter_mut() {
        *x = rng.sample(StandardNormal);
    }
    m
}

/// `count` i.i.d. draws from `g`, one per column.
pub fn sample_gaussian(g: &Gaussian, count: usize, rng: &mut impl rand::Rng) -> Result<DMatrix<f64>> {
    if count == 0 {
        return Err(Error::Usage("sample_gaussian needs count >= 1".into()));
    }
    let xi = standard_normals(g.dim(), count, rng);
    let mut out = g.cov.cholesky_factor() * xi;
    for mut col in out.column_iter_mut() {
        col += &g.mean;
    }
    Ok(out)
}

/// `K = A (S)⁻¹` for a `cross` term `A` and an SPD innovation matrix `S`,
/// computed by solving `S Kᵀ = Aᵀ`.
pub fn gain_from_cross(cross: &DMatrix<f64>, innovation: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if innovation.nrows() != cross.ncols() {
        return Err(Error::dim("gain_from_cross", cross.ncols(), innovation.nrows()));
    }
    let s = symmetrize(innovation);
    let rhs = cross.transpose();
    let kt = match Cholesky::new(s.clone()) {
        Some(ch) => ch.solve(&rhs),
        None => s
            .lu()
            .solve(&rhs)
            .ok_or(Error::NotSpd("singular innovation matrix"))?,
    };
    Ok(kt.transpose())
}

/// `K = P Hᵀ (H P Hᵀ + R)⁻¹`. `P` may be any symmetric PSD matrix, including
/// zero.
pub fn kalman_gain(p: &DMatrix<f64>, h: &DMatrix<f64>, r: &SpdMatrix) -> Result<DMatrix<f64>> {
    check_obs_dims(h, p.nrows(), r.dim(), "kalman_gain")?;
    let pht = p * h.transpose();
    let innovation = h * &pht + r.matrix();
    gain_from_cross(&pht, &innovation)
}

fn check_obs_dims(h: &DMatrix<f64>, d: usize, k: usize, ctx: &'static str) -> Result<()> {
    if h.ncols() != d {
        return Err(Error::dim(ctx, d, h.ncols()));
    }
    if h.nrows() != k {
        return Err(Error::dim(ctx, k, h.nrows()));
    }
    Ok(())
}

/// Posterior in precision form: `C⁻¹ = HᵀR⁻¹H + P⁻¹`, `C⁻¹μ = HᵀR⁻¹y + P⁻¹m`.
pub fn posterior_precision_form(
    h: &DMatrix<f64>,
    r: &SpdMatrix,
    prior: &Gaussian,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, SpdMatrix)> {
    check_obs_dims(h, prior.dim(), r.dim(), "posterior_precision_form")?;
    if y.len() != r.dim() {
        return Err(Error::dim("posterior_precision_form", r.dim(), y.len()));
    }
    let rinv_h = r.solve_mat(h);
    let precision = SpdMatrix::new(h.transpose() * &rinv_h + prior.cov.precision())?;
    let rhs = h.transpose() * r.solve_vec(y) + prior.cov.solve_vec(&prior.mean);
    let mean = precision.solve_vec(&rhs);
    let cov = SpdMatrix::new(precision.precision())?;
    Ok((mean, cov))
}

/// Posterior in Kalman form: `μ = m + K(y − Hm)`, `C = (I − KH)P`.
pub fn posterior_kalman_form(
    h: &DMatrix<f64>,
    r: &SpdMatrix,
    prior: &Gaussian,
    y: &DVector<f64>,
) -> Result<PosteriorResult> {
    check_obs_dims(h, prior.dim(), r.dim(), "posterior_kalman_form")?;
    if y.len() != r.dim() {
        return Err(Error::dim("posterior_kalman_form", r.dim(), y.len()));
    }
    let p = prior.cov.matrix();
    let gain = kalman_gain(p, h, r)?;
    let mean = &prior.mean + &gain * (y - h * &prior.mean);
    let d = prior.dim();
    let cov = SpdMatrix::new((DMatrix::identity(d, d) - &gain * h) * p)?;
    Ok(PosteriorResult { mean, cov, gain })
}

/// Linear-Gaussian posterior. Computes both the precision and the Kalman
/// form; debug builds assert that they agree to 1e-8 relative.
pub fn posterior_linear(
    h: &DMatrix<f64>,
    r: &SpdMatrix,
    prior: &Gaussian,
    y: &DVector<f64>,
) -> Result<PosteriorResult> {
    let kalman = posterior_kalman_form(h, r, prior, y)?;
    if cfg!(debug_assertions) {
        let (mean, cov) = posterior_precision_form(h, r, prior, y)?;
        let dm = (&mean - &kalman.mean).norm() / kalman.mean.norm().max(1.0);
        let dc = rel_frobenius(cov.matrix(), kalman.cov.matrix());
        debug_assert!(
            dm <= 1e-8 && dc <= 1e-8,
            "posterior forms disagree: mean {dm:e}, cov {dc:e}"
        );
    }
    Ok(kalman)
}

/// Default relative eigenvalue cutoff for pseudoinverses of `dim × dim`
/// matrices.
pub fn default_pinv_rtol(dim: usize) -> f64 {
    1e-12 * dim.max(1) as f64
}

/// Moore-Penrose pseudoinverse of a symmetric PSD matrix. Eigenvalues at or
/// below `rtol · λ_max` are treated as zero.
pub fn pseudo_inverse(m: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let n = m.nrows();
    let eig = SymmetricEigen::new(symmetrize(m));
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    if lmax <= 0.0 {
        return DMatrix::zeros(n, n);
    }
    let cutoff = rtol * lmax;
    let mut scaled = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let f = if lam > cutoff { 1.0 / lam } else { 0.0 };
        scaled.column_mut(j).scale_mut(f);
    }
    symmetrize(&(scaled * eig.eigenvectors.transpose()))
}

/// Pseudoinverse of a rectangular matrix through the eigendecomposition of
/// its smaller Gram matrix, dropping singular values with
/// `σ² ≤ rtol · σ²_max`. With `A Aᵀ = M` this matches the cutoff of
/// [`pseudo_inverse`] applied to `M`.
pub fn pseudo_inverse_rect(a: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    if r >= c {
        pseudo_inverse(&a.tr_mul(a), rtol) * a.transpose()
    } else {
        a.transpose() * pseudo_inverse(&(a * a.transpose()), rtol)
    }
}
