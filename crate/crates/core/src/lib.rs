//! Wasserstein distributionally robust control of partially observed
//! linear systems.
//!
//! The controller minimizes the worst-case expected quadratic cost over
//! disturbance laws in a Gelbrich ball around a nominal distribution,
//! through a Lagrangian relaxation with penalty `lambda`. The pieces:
//!
//! - [`riccati`]: backward recursion for the penalized value function.
//! - [`worst_case`]: the adversary's mean and covariance at each stage.
//! - [`estimator`]: Kalman filter driven by the worst-case moments.
//! - [`controller`]: closed-loop simulation of the WDRC and LQG policies.
//! - [`bounds`]: value evaluation, the guaranteed cost and penalty calibration.
//! - [`harness`]: Monte Carlo campaigns, statistics and reports.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod controller;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod parallel;
pub mod psd;
pub mod riccati;
pub mod worst_case;

pub use error::{Error, Result};
pub use model::{CostSpec, Distribution, LinearSystem, NominalDistribution, RobustnessParams, ScenarioSpec};
pub use psd::{MomentPair, SymMatrix};
