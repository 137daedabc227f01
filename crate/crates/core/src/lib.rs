//! Large deviations for single- and many-server queues with exponential
//! reneging: local rate functions, fluid limits, closed-form Euler-Lagrange
//! minimizers, a discretized variational oracle and importance-sampled
//! simulation.
//!
//! The analytic layers are generic over [`Real`] (`f32` or `f64`); the
//! crate-root aliases fix the scalar to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod el_minimizer;
pub mod error;
pub mod fluid;
pub mod model;
pub mod oracle;
pub mod qsim;
pub mod rate_fn;
pub mod roots;
pub mod scalar;

pub use error::{Error, Result};
pub use model::{Controls, CostComponents, Mode, Purpose};
pub use scalar::Real;

pub type ModelParams = model::ModelParams<f64>;
pub type Horizon = model::Horizon<f64>;
pub type TargetRate = model::TargetRate<f64>;
pub type Trajectory = model::Trajectory<f64>;
pub type CostReport = model::CostReport<f64>;
pub type TiltParameters = el_minimizer::TiltParameters<f64>;
