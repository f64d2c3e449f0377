//! Two-parameter elliptic boundary value problem
//! `(exp(u₁) p′)′ = 1` on `(0, 1)`, `p(0) = 0`, `p(1) = u₂`, observed at
//! `x = 0.25` and `x = 0.75`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{ForwardModel, Problem};
use crate::error::Result;
use crate::linalg::{sample_gaussian, Gaussian, SpdMatrix};
use crate::rng::rng_from_seed;

pub const ELLIPTIC2D_TRUTH: [f64; 2] = [-2.6, 104.5];
/// Seed of the observation noise draw.
pub const ELLIPTIC2D_SEED: u64 = 2020;
const OBS_POINTS: [f64; 2] = [0.25, 0.75];
const NOISE_STD: f64 = 0.1;

#[derive(Clone, Debug, Default)]
pub struct Elliptic2dModel;

impl Elliptic2dModel {
    /// Closed-form solution `p_u(x) = u₂x − ½e^{−u₁}(x² − x)`.
    pub fn solution(u: &DVector<f64>, x: f64) -> f64 {
        u[1] * x - 0.5 * (-u[0]).exp() * (x * x - x)
    }
}

impl ForwardModel for Elliptic2dModel {
    fn dim_u(&self) -> usize {
        2
    }

    fn dim_y(&self) -> usize {
        2
    }

    fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_iterator(2, OBS_POINTS.iter().map(|&x| Self::solution(u, x))))
    }

    fn jacobian(&self, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        let e = (-u[0]).exp();
        Some(DMatrix::from_fn(2, 2, |i, j| {
            let x = OBS_POINTS[i];
            if j == 0 {
                0.5 * e * (x * x - x)
            } else {
                x
            }
        }))
    }
}

/// Prior `N(0, 1) × N(100, 16)`, noise `γ = 0.1`, truth `(−2.6, 104.5)`.
pub fn elliptic2d() -> Result<Problem> {
    let model = Elliptic2dModel;
    let prior = Gaussian::new(
        DVector::from_vec(vec![0.0, 100.0]),
        SpdMatrix::from_diagonal(&[1.0, 16.0])?,
    )?;
    let noise = SpdMatrix::identity(2).scaled(NOISE_STD * NOISE_STD)?;
    let truth = DVector::from_column_slice(&ELLIPTIC2D_TRUTH);
    let mut rng = rng_from_seed(ELLIPTIC2D_SEED);
    let eta = sample_gaussian(&Gaussian::new(DVector::zeros(2), noise.clone())?, 1, &mut rng)?;
    let y = model.eval(&truth)? + eta.column(0);
    Problem::new("elliptic2d", Arc::new(model), prior, noise, y, Some(truth))
}
