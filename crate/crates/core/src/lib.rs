//! Numerical controllability analysis for coupled degenerate parabolic systems
//! `Y_t = (D M + A) Y + B v 1_omega` with `M y = (a y_x)_x` degenerate at `x = 0`.
//!
//! Modules, bottom-up:
//! - [`model`]: problem ingredients and their validation
//! - [`spectral`]: graded-mesh P1 discretization of `-M` and its eigenbasis
//! - [`algebra`]: mode-wise Kalman matrices, rank certificates and related algebra
//! - [`dynamics`]: exact exponential integrators for the state and adjoint systems
//! - [`hum`]: penalized HUM controls, epsilon sweeps, observability estimates
//! - [`carleman`]: Carleman weight construction and parameter certification
//! - [`semilinear`]: linearize-and-control fixed point for semilinear systems
//! - [`cli`]: batch front end

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::excessive_precision)]

pub mod algebra;
pub mod carleman;
pub mod cli;
pub mod dynamics;
pub mod hum;
pub mod model;
pub mod output;
pub mod semilinear;
pub mod spectral;

pub use model::{build_problem, preset, ProblemSpec};
pub use spectral::SpectralBasis;
