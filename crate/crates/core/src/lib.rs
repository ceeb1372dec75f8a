//! Safe online exploration for partially known nonlinear systems.
//!
//! The unknown part of the dynamics `ẋ = Ax + Bu + g(x)` is learned online by
//! a Gaussian process. A quadratic control Lyapunov function from LQR, robustified
//! with the GP confidence envelope, defines a probabilistic control-invariant set,
//! and a small convex QP filters every control input so the robust decrease
//! condition holds.
//!
//! Module map:
//!
//! - [`kernels`], [`gp`], [`sparse_gp`]: residual models.
//! - [`calibration`]: confidence scale `β_t`, variance calibration `γ*`, coverage.
//! - [`control`]: LQR/Riccati, linearisation and ZOH discretisation.
//! - [`pcis`]: membership predicate, grid certification, ellipsoid levels.
//! - [`safe_qp`]: the CLF-QP safety filter.
//! - [`plants`]: the polynomial and three-tank truth simulators.
//! - [`exploration`]: the online safe exploration loop and the unsafe baseline.
//! - [`metrics`]: learning, uncertainty and safety metrics.
//! - [`config`], [`cli`]: experiment configuration and subcommands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod cli;
pub mod config;
pub mod control;
pub mod error;
pub mod exploration;
pub mod gp;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod pcis;
pub mod plants;
pub mod rng;
pub mod safe_qp;
pub mod sparse_gp;

pub use error::{Error, Result};
