//! Linear elliptic problem `−p″ + p = u` on `(0, π)` with homogeneous
//! Dirichlet conditions, observed at `x_j = jπ/16`, `j = 1..15`.
//!
//! Discretization: continuous piecewise-linear elements on a uniform mesh
//! with 256 interior nodes (`w = π/257`). With the stiffness matrix
//! `K = tridiag(−1, 2, −1)/w` and the lumped mass matrix `M = w·I`, the
//! Galerkin system `(K + M) p = M u` reads
//!
//! ```text
//! (tridiag(−1, 2, −1)/w² + I) p = u
//! ```
//!
//! on nodal values. Observations interpolate the piecewise-linear solution.
//! The prior covariance `10 (A − id)⁻¹` is discretized as `10 K⁻¹`, which is
//! exactly ten times the Brownian bridge covariance `min(x, x′)(π − max(x, x′))/π`
//! evaluated at the nodes.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{ForwardModel, Problem};
use crate::error::{Error, Result};
use crate::linalg::{sample_gaussian, Gaussian, SpdMatrix};
use crate::rng::rng_from_seed;

pub const N_NODES: usize = 256;
pub const N_OBS: usize = 15;
/// Seed of the truth and noise draws.
pub const ELLIPTIC1D_SEED: u64 = 1108;
const NOISE_STD: f64 = 0.01;
const PRIOR_SCALE: f64 = 10.0;

#[derive(Clone, Debug)]
pub struct Elliptic1dModel {
    n: usize,
    width: f64,
    /// Thomas-algorithm factors of the tridiagonal system: modified
    /// super-diagonal and pivots.
    c_prime: Vec<f64>,
    pivots: Vec<f64>,
    off: f64,
    /// Observation `j` interpolates between nodes `left` and `left + 1`
    /// (1-based interior numbering, 0 and n+1 are boundary).
    obs: Vec<(usize, f64)>,
}

impl Elliptic1dModel {
    pub fn new(n: usize) -> Result<Self> {
        let width = PI / (n as f64 + 1.0);
        let diag = 2.0 / (width * width) + 1.0;
        let off = -1.0 / (width * width);
        // LU of the SPD tridiagonal; all pivots must be positive.
        let mut c_prime = vec![0.0; n];
        let mut pivots = vec![0.0; n];
        for i in 0..n {
            let piv = if i == 0 { diag } else { diag - off * c_prime[i - 1] };
            if !(piv > 0.0) {
                return Err(Error::NotSpd("elliptic1d FEM matrix"));
            }
            pivots[i] = piv;
            c_prime[i] = off / piv;
        }
        let obs = (1..=N_OBS)
            .map(|j| {
                let x = j as f64 * PI / (N_OBS as f64 + 1.0);
                let s = x / width;
                let left = s.floor() as usize;
                (left, s - left as f64)
            })
            .collect();
        Ok(Self {
            n,
            width,
            c_prime,
            pivots,
            off,
            obs,
        })
    }

    pub fn mesh_width(&self) -> f64 {
        self.width
    }

    /// Interior node coordinates.
    pub fn nodes(&self) -> Vec<f64> {
        (1..=self.n).map(|i| i as f64 * self.width).collect()
    }

    /// Nodal FEM solution `p = A⁻¹ u`.
    pub fn solve(&self, u: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let mut d = vec![0.0; n];
        for i in 0..n {
            let prev = if i == 0 { 0.0 } else { d[i - 1] };
            d[i] = (u[i] - self.off * prev) / self.pivots[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            d[i] -= self.c_prime[i] * d[i + 1];
        }
        DVector::from_vec(d)
    }

    fn observe(&self, p: &DVector<f64>) -> DVector<f64> {
        let node = |i: usize| if i == 0 || i > self.n { 0.0 } else { p[i - 1] };
        DVector::from_iterator(
            self.obs.len(),
            self.obs.iter().map(|&(l, w)| (1.0 - w) * node(l) + w * node(l + 1)),
        )
    }

    /// Matrix of `h`, assembled column by column from unit vectors.
    pub fn observation_matrix(&self) -> DMatrix<f64> {
        let cols: Vec<DVector<f64>> = (0..self.n)
            .map(|j| {
                let mut e = DVector::zeros(self.n);
                e[j] = 1.0;
                self.observe(&self.solve(&e))
            })
            .collect();
        DMatrix::from_columns(&cols)
    }

    /// `10 K⁻¹` in closed form: `10 w · i(n+1−j)/(n+1)` for `i ≤ j`.
    pub fn prior_covariance(&self) -> DMatrix<f64> {
        let n1 = self.n as f64 + 1.0;
        DMatrix::from_fn(self.n, self.n, |a, b| {
            let (i, j) = ((a.min(b) + 1) as f64, (a.max(b) + 1) as f64);
            PRIOR_SCALE * self.width * i * (n1 - j) / n1
        })
    }
}

impl ForwardModel for Elliptic1dModel {
    fn dim_u(&self) -> usize {
        self.n
    }

    fn dim_y(&self) -> usize {
        self.obs.len()
    }

    fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.observe(&self.solve(u)))
    }

    fn jacobian(&self, _u: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.observation_matrix())
    }
}

/// `d = 256`, `k = 15`, prior `N(0, 10 K⁻¹)`, truth drawn from the prior,
/// noise `γ = 0.01`.
pub fn elliptic1d() -> Result<Problem> {
    let model = Elliptic1dModel::new(N_NODES)?;
    let prior = Gaussian::new(DVector::zeros(N_NODES), SpdMatrix::new(model.prior_covariance())?)?;
    let noise = SpdMatrix::identity(N_OBS).scaled(NOISE_STD * NOISE_STD)?;
    let mut rng = rng_from_seed(ELLIPTIC1D_SEED);
    let truth = sample_gaussian(&prior, 1, &mut rng)?.column(0).into_owned();
    let eta = sample_gaussian(&Gaussian::new(DVector::zeros(N_OBS), noise.clone())?, 1, &mut rng)?;
    let y = model.eval(&truth)? + eta.column(0);
    Problem::new("elliptic1d", Arc::new(model), prior, noise, y, Some(truth))
}
