//! Forward models and the inverse problems built on them.
//!
//! A [`Problem`] couples a forward map `h` with a Gaussian prior, a noise
//! covariance, observed data `y = h(u†) + η` and, for synthetic problems,
//! the truth `u†` used to generate it.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{mahalanobis_sqnorm, Gaussian, SpdMatrix};

mod elliptic1d;
mod elliptic2d;
mod linear;
mod lorenz96;
mod oscillatory;

pub use elliptic1d::{elliptic1d, Elliptic1dModel, ELLIPTIC1D_SEED};
pub use elliptic2d::{elliptic2d, Elliptic2dModel, ELLIPTIC2D_SEED, ELLIPTIC2D_TRUTH};
pub use linear::{linear_gaussian, LinearModel};
pub use lorenz96::{lorenz96, Lorenz96Config, Lorenz96Model};
pub use oscillatory::{oscillatory_regression, OscillatoryModel, OSCILLATORY_SEED};

/// A forward map `u ↦ h(u)`.
pub trait ForwardModel: Send + Sync + fmt::Debug {
    fn dim_u(&self) -> usize;
    fn dim_y(&self) -> usize;
    fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>>;

    /// Analytic Jacobian, when the model provides one.
    fn jacobian(&self, _u: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }

    /// Whether `eval` may be called from several threads at once.
    fn concurrency_safe(&self) -> bool {
        true
    }
}

#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub prior: Gaussian,
    pub noise: SpdMatrix,
    pub data: DVector<f64>,
    pub truth: Option<DVector<f64>>,
    model: Arc<dyn ForwardModel>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("dim_u", &self.dim_u())
            .field("dim_y", &self.dim_y())
            .finish_non_exhaustive()
    }
}

impl Problem {
    pub fn new(
        name: impl Into<String>,
        model: Arc<dyn ForwardModel>,
        prior: Gaussian,
        noise: SpdMatrix,
        data: DVector<f64>,
        truth: Option<DVector<f64>>,
    ) -> Result<Self> {
        let (d, k) = (model.dim_u(), model.dim_y());
        if prior.dim() != d {
            return Err(Error::dim("Problem prior", d, prior.dim()));
        }
        if noise.dim() != k {
            return Err(Error::dim("Problem noise", k, noise.dim()));
        }
        if data.len() != k {
            return Err(Error::dim("Problem data", k, data.len()));
        }
        if let Some(t) = &truth {
            if t.len() != d {
                return Err(Error::dim("Problem truth", d, t.len()));
            }
        }
        Ok(Self {
            name: name.into(),
            prior,
            noise,
            data,
            truth,
            model,
        })
    }

    /// Linear problem `h(u) = H u`.
    pub fn linear(
        h: DMatrix<f64>,
        noise: SpdMatrix,
        prior: Gaussian,
        data: DVector<f64>,
        truth: Option<DVector<f64>>,
    ) -> Result<Self> {
        Self::new("linear", Arc::new(LinearModel::new(h)), prior, noise, data, truth)
    }

    pub fn dim_u(&self) -> usize {
        self.model.dim_u()
    }

    pub fn dim_y(&self) -> usize {
        self.model.dim_y()
    }

    pub fn model(&self) -> &Arc<dyn ForwardModel> {
        &self.model
    }

    /// `h(u)`; non-finite output is reported as an error.
    pub fn forward(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.dim_u() {
            return Err(Error::dim("Problem::forward", self.dim_u(), u.len()));
        }
        let out = self.model.eval(u)?;
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::Forward(format!("{}: non-finite output", self.name)));
        }
        Ok(out)
    }

    /// Applies `h` to every column of `members`.
    pub fn forward_columns(&self, members: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let cols: Vec<DVector<f64>> = if self.model.concurrency_safe() {
            (0..members.ncols())
                .into_par_iter()
                .map(|j| self.forward(&members.column(j).into_owned()))
                .collect::<Result<_>>()?
        } else {
            members
                .column_iter()
                .map(|c| self.forward(&c.into_owned()))
                .collect::<Result<_>>()?
        };
        Ok(DMatrix::from_columns(&cols))
    }

    /// `J_DM(u) = ½|y − h(u)|²_R`.
    pub fn data_misfit(&self, u: &DVector<f64>) -> Result<f64> {
        let r = &self.data - self.forward(u)?;
        Ok(0.5 * mahalanobis_sqnorm(&r, &self.noise)?)
    }

    /// `½|u − m|²_P`.
    pub fn prior_penalty(&self, u: &DVector<f64>) -> Result<f64> {
        Ok(0.5 * mahalanobis_sqnorm(&(u - &self.prior.mean), &self.prior.cov)?)
    }

    /// `J_TP(u) = J_DM(u) + ½|u − m|²_P`.
    pub fn tikhonov(&self, u: &DVector<f64>) -> Result<f64> {
        Ok(self.data_misfit(u)? + self.prior_penalty(u)?)
    }

    /// `|u − u†| / |u†|`, or NaN without a truth.
    pub fn relative_error(&self, u: &DVector<f64>) -> f64 {
        match &self.truth {
            Some(t) => (u - t).norm() / t.norm(),
            None => f64::NAN,
        }
    }
}

/// Serializable selector for the built-in problems.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case")]
pub enum ProblemSpec {
    Elliptic2d,
    Elliptic1d,
    Lorenz96 {
        #[serde(default = "default_l96_dt")]
        dt: f64,
    },
    Oscillatory {
        #[serde(default = "default_osc_seed")]
        seed: u64,
    },
    Linear {
        d: usize,
        k: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_l96_dt() -> f64 {
    Lorenz96Config::default().dt
}

fn default_osc_seed() -> u64 {
    OSCILLATORY_SEED
}

impl ProblemSpec {
    pub const IDS: [&'static str; 5] = ["elliptic2d", "elliptic1d", "lorenz96", "oscillatory", "linear"];

    /// Default parameters for a problem id.
    pub fn from_id(id: &str) -> Result<Self> {
        Ok(match id {
            "elliptic2d" => ProblemSpec::Elliptic2d,
            "elliptic1d" => ProblemSpec::Elliptic1d,
            "lorenz96" => ProblemSpec::Lorenz96 { dt: default_l96_dt() },
            "oscillatory" => ProblemSpec::Oscillatory { seed: OSCILLATORY_SEED },
            "linear" => ProblemSpec::Linear { d: 10, k: 7, seed: 0 },
            other => return Err(Error::Config(format!("unknown problem '{other}'"))),
        })
    }

    pub fn id(&self) -> &'static str {
        match self {
            ProblemSpec::Elliptic2d => "elliptic2d",
            ProblemSpec::Elliptic1d => "elliptic1d",
            ProblemSpec::Lorenz96 { .. } => "lorenz96",
            ProblemSpec::Oscillatory { .. } => "oscillatory",
            ProblemSpec::Linear { .. } => "linear",
        }
    }

    pub fn build(&self) -> Result<Problem> {
        match *self {
            ProblemSpec::Elliptic2d => elliptic2d(),
            ProblemSpec::Elliptic1d => elliptic1d(),
            ProblemSpec::Lorenz96 { dt } => lorenz96(&Lorenz96Config { dt, ..Default::default() }),
            ProblemSpec::Oscillatory { seed } => oscillatory_regression(seed),
            ProblemSpec::Linear { d, k, seed } => linear_gaussian(d, k, seed),
        }
    }
}

/// Central finite-difference Jacobian with per-coordinate step
/// `rel_step · (1 + |u_j|)`.
pub fn fd_jacobian(problem: &Problem, u: &DVector<f64>, rel_step: f64) -> Result<DMatrix<f64>> {
    let d = u.len();
    let cols: Vec<DVector<f64>> = (0..d)
        .map(|j| {
            let step = rel_step * (1.0 + u[j].abs());
            let mut up = u.clone();
            let mut dn = u.clone();
            up[j] += step;
            dn[j] -= step;
            Ok((problem.forward(&up)? - problem.forward(&dn)?) / (2.0 * step))
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_columns(&cols))
}
