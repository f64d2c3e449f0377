//! Iterative Kalman-type optimizers for nonlinear least squares.

pub mod derivative;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod methods;
pub mod oracles;
pub mod problems;
pub mod rng;

pub use ensemble::{Ensemble, EnsembleStats};
pub use error::{Error, Result};
pub use linalg::{Gaussian, PosteriorResult, SpdMatrix};
pub use problems::{ForwardModel, Problem, ProblemSpec};
pub use derivative::{DerivMethod, JacobianProvider};
pub use harness::{ExperimentConfig, MethodId, RunTrace};
pub use methods::{EnsMethod, EnsMethodConfig, MethodState};
