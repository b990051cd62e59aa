//! Latent collocation planning.
//!
//! Trajectory optimization over state and action sequences under a Gaussian
//! dynamics model, solved with a block-tridiagonal Levenberg–Marquardt
//! optimizer and adaptive Lagrange multipliers. Shooting baselines (CEM, MPPI,
//! gradient and Gauss–Newton shooting, iLQR), analytic test environments, an
//! MPC execution loop with online model learning and an experiment harness are
//! built on the same model contracts.

pub mod btlm;
pub mod control;
pub mod defaults;
pub mod dynamics;
mod error;
pub mod harness;
pub mod latco;
pub mod planner;
pub mod shooting;
pub mod worlds;

pub use error::{Error, Result};
