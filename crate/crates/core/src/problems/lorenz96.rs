//! Initial-condition recovery for the Lorenz-96 system
//! `dz_l/dt = z_{l−1}(z_{l+1} − z_{l−2}) − z_l + F` with cyclic indices.
//!
//! The forward map integrates from `z(0) = u` with classical fixed-step RK4
//! and returns the observed coordinates at each observation time, ordered
//! time-major: all coordinates at the first time, then the second.

use std::sync::Arc;

use nalgebra::DVector;

use super::{ForwardModel, Problem};
use crate::error::{Error, Result};
use crate::linalg::{sample_gaussian, Gaussian, SpdMatrix};
use crate::rng::rng_from_seed;

#[derive(Clone, Debug, PartialEq)]
pub struct Lorenz96Config {
    pub d: usize,
    pub forcing: f64,
    pub obs_times: Vec<f64>,
    /// 1-based observed coordinates.
    pub obs_coords: Vec<usize>,
    pub dt: f64,
    pub noise_std: f64,
    pub prior_var: f64,
    /// Seed of the truth and noise draws.
    pub seed: u64,
}

impl Default for Lorenz96Config {
    fn default() -> Self {
        Self {
            d: 40,
            forcing: 8.0,
            obs_times: vec![0.3, 0.6],
            obs_coords: (1..=39).step_by(2).collect(),
            dt: 0.005,
            noise_std: 0.01,
            prior_var: 2.0,
            seed: 96,
        }
    }
}

impl Lorenz96Config {
    fn validate(&self) -> Result<Vec<usize>> {
        if self.d < 4 {
            return Err(Error::Config("lorenz96 needs d >= 4".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("lorenz96 dt must be positive".into()));
        }
        if self.obs_times.is_empty() || self.obs_times.windows(2).any(|w| w[1] <= w[0]) || self.obs_times[0] <= 0.0 {
            return Err(Error::Config("lorenz96 observation times must be positive and increasing".into()));
        }
        if self.obs_coords.iter().any(|&c| c == 0 || c > self.d) {
            return Err(Error::Config("lorenz96 observed coordinates must lie in 1..=d".into()));
        }
        self.obs_times
            .iter()
            .map(|&t| {
                let steps = (t / self.dt).round();
                if (steps * self.dt - t).abs() > 1e-9 * t.max(1.0) {
                    Err(Error::Config(format!("lorenz96 dt {} does not divide observation time {t}", self.dt)))
                } else {
                    Ok(steps as usize)
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Lorenz96Model {
    cfg: Lorenz96Config,
    obs_steps: Vec<usize>,
}

fn rhs(z: &[f64], forcing: f64, out: &mut [f64]) {
    let d = z.len();
    for l in 0..d {
        let prev = z[(l + d - 1) % d];
        let prev2 = z[(l + d - 2) % d];
        let next = z[(l + 1) % d];
        out[l] = prev * (next - prev2) - z[l] + forcing;
    }
}

impl Lorenz96Model {
    pub fn new(cfg: Lorenz96Config) -> Result<Self> {
        let obs_steps = cfg.validate()?;
        Ok(Self { cfg, obs_steps })
    }

    pub fn config(&self) -> &Lorenz96Config {
        &self.cfg
    }

    /// Full states at each of `steps` (increasing step counts).
    pub fn integrate(&self, u: &[f64], dt: f64, steps: &[usize]) -> Result<Vec<Vec<f64>>> {
        let d = u.len();
        let f = self.cfg.forcing;
        let mut z = u.to_vec();
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
            (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        let mut out = Vec::with_capacity(steps.len());
        let mut done = 0;
        for &target in steps {
            while done < target {
                rhs(&z, f, &mut k1);
                for i in 0..d {
                    tmp[i] = z[i] + 0.5 * dt * k1[i];
                }
                rhs(&tmp, f, &mut k2);
                for i in 0..d {
                    tmp[i] = z[i] + 0.5 * dt * k2[i];
                }
                rhs(&tmp, f, &mut k3);
                for i in 0..d {
                    tmp[i] = z[i] + dt * k3[i];
                }
                rhs(&tmp, f, &mut k4);
                for i in 0..d {
                    z[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                done += 1;
            }
            if z.iter().any(|x| !x.is_finite()) {
                return Err(Error::Forward(format!("lorenz96 state became non-finite at step {done}")));
            }
            out.push(z.clone());
        }
        Ok(out)
    }

    /// Full states at the observation times, integrated with step `dt`.
    pub fn states_at_obs_times(&self, u: &[f64], dt: f64) -> Result<Vec<Vec<f64>>> {
        let steps: Vec<usize> = self.cfg.obs_times.iter().map(|t| (t / dt).round() as usize).collect();
        self.integrate(u, dt, &steps)
    }
}

impl ForwardModel for Lorenz96Model {
    fn dim_u(&self) -> usize {
        self.cfg.d
    }

    fn dim_y(&self) -> usize {
        self.cfg.obs_times.len() * self.cfg.obs_coords.len()
    }

    fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let states = self.integrate(u.as_slice(), self.cfg.dt, &self.obs_steps)?;
        Ok(DVector::from_iterator(
            self.dim_y(),
            states
                .iter()
                .flat_map(|z| self.cfg.obs_coords.iter().map(move |&c| z[c - 1])),
        ))
    }
}

/// Lorenz-96 initial-condition problem with prior `N(0, 2 I)`; the truth is
/// a draw from the prior under `cfg.seed`.
pub fn lorenz96(cfg: &Lorenz96Config) -> Result<Problem> {
    let model = Lorenz96Model::new(cfg.clone())?;
    let (d, k) = (model.dim_u(), model.dim_y());
    let prior = Gaussian::new(DVector::zeros(d), SpdMatrix::identity(d).scaled(cfg.prior_var)?)?;
    let noise = SpdMatrix::identity(k).scaled(cfg.noise_std * cfg.noise_std)?;
    let mut rng = rng_from_seed(cfg.seed);
    let truth = sample_gaussian(&prior, 1, &mut rng)?.column(0).into_owned();
    let eta = sample_gaussian(&Gaussian::new(DVector::zeros(k), noise.clone())?, 1, &mut rng)?;
    let y = model.eval(&truth)? + eta.column(0);
    Problem::new("lorenz96", Arc::new(model), prior, noise, y, Some(truth))
}
