use nalgebra::{DMatrix, DVector};

use super::{ForwardModel, Problem};
use crate::error::Result;
use crate::linalg::{sample_gaussian, standard_normals, Gaussian, SpdMatrix};
use crate::rng::rng_from_seed;

/// `h(u) = H u`.
#[derive(Clone, Debug)]
pub struct LinearModel {
    pub h: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(h: DMatrix<f64>) -> Self {
        Self { h }
    }
}

impl ForwardModel for LinearModel {
    fn dim_u(&self) -> usize {
        self.h.ncols()
    }

    fn dim_y(&self) -> usize {
        self.h.nrows()
    }

    fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.h * u)
    }

    fn jacobian(&self, _u: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.h.clone())
    }
}

/// SPD matrix `Q diag(λ) Qᵀ` with a random orthogonal `Q` and eigenvalues
/// uniform in `[1, 10]` (condition number at most 10).
fn random_well_conditioned(n: usize, rng: &mut impl rand::Rng) -> Result<SpdMatrix> {
    let q = standard_normals(n, n, rng).qr().q();
    let lam = DVector::from_fn(n, |_, _| rng.random_range(1.0..=10.0));
    SpdMatrix::new(&q * DMatrix::from_diagonal(&lam) * q.transpose())
}

/// Random linear-Gaussian problem: standard normal `H`, well-conditioned
/// `R` and `P`, standard normal `m`, truth drawn from the prior and
/// `y = H u† + η`.
pub fn linear_gaussian(d: usize, k: usize, seed: u64) -> Result<Problem> {
    if d == 0 || k == 0 {
        return Err(crate::Error::Usage("linear_gaussian needs d, k >= 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let h = standard_normals(k, d, &mut rng);
    let r = random_well_conditioned(k, &mut rng)?;
    let p = random_well_conditioned(d, &mut rng)?;
    let m = standard_normals(d, 1, &mut rng).column(0).into_owned();
    let prior = Gaussian::new(m, p)?;
    let truth = sample_gaussian(&prior, 1, &mut rng)?.column(0).into_owned();
    let noise = Gaussian::new(DVector::zeros(k), r.clone())?;
    let eta = sample_gaussian(&noise, 1, &mut rng)?.column(0).into_owned();
    let y = &h * &truth + eta;
    Problem::linear(h, r, prior, y, Some(truth))
}
