//! High-dimensional regression `h(u) = A u + sin(c B u)` with Gaussian
//! random `A, B ∈ ℝ^{150×200}` and `c = 20`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{ForwardModel, Problem};
use crate::error::Result;
use crate::linalg::{sample_gaussian, standard_normals, Gaussian, SpdMatrix};
use crate::rng::rng_from_seed;

pub const OSCILLATORY_SEED: u64 = 150_200;
const DIM_U: usize = 200;
const DIM_Y: usize = 150;
const FREQUENCY: f64 = 20.0;
const NOISE_STD: f64 = 0.01;
const PRIOR_VAR: f64 = 4.0;
const TRUTH_LEVEL: f64 = 2.0;

#[derive(Clone, Debug)]
pub struct OscillatoryModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub frequency: f64,
}

impl ForwardModel for OscillatoryModel {
    fn dim_u(&self) -> usize {
        self.a.ncols()
    }

    fn dim_y(&self) -> usize {
        self.a.nrows()
    }

    fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let osc = (&self.b * u).map(|v| (self.frequency * v).sin());
        Ok(&self.a * u + osc)
    }

    fn jacobian(&self, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        let w = (&self.b * u).map(|v| self.frequency * (self.frequency * v).cos());
        let mut scaled = self.b.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= w[i];
        }
        Some(&self.a + scaled)
    }
}

/// `d = 200`, `k = 150`, prior `N(0, 4 I)`, truth `2·1`, noise `γ = 0.01`.
/// `seed` fixes `A`, `B` and the noise draw.
pub fn oscillatory_regression(seed: u64) -> Result<Problem> {
    let mut rng = rng_from_seed(seed);
    let a = standard_normals(DIM_Y, DIM_U, &mut rng);
    let b = standard_normals(DIM_Y, DIM_U, &mut rng);
    let model = OscillatoryModel { a, b, frequency: FREQUENCY };
    let prior = Gaussian::new(DVector::zeros(DIM_U), SpdMatrix::identity(DIM_U).scaled(PRIOR_VAR)?)?;
    let noise = SpdMatrix::identity(DIM_Y).scaled(NOISE_STD * NOISE_STD)?;
    let truth = DVector::from_element(DIM_U, TRUTH_LEVEL);
    let eta = sample_gaussian(&Gaussian::new(DVector::zeros(DIM_Y), noise.clone())?, 1, &mut rng)?;
    let y = model.eval(&truth)? + eta.column(0);
    Problem::new("oscillatory", Arc::new(model), prior, noise, y, Some(truth))
}
