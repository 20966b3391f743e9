//! Sampling parameters of differentiable representations by pulling back
//! probability-flow diffusion dynamics from sample space to parameter space.
//!
//! The crate is organised bottom-up: [`schedule`] is the clock, [`score`]
//! supplies noise predictions, [`diffrep`] renders parameters to images,
//! [`pullback`] moves image-space increments into parameter space, and
//! [`sampler`] / [`baselines`] run whole trajectories. [`metrics`] and
//! [`harness`] evaluate and orchestrate runs.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod diffrep;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod optim;
pub mod pullback;
pub mod sampler;
pub mod schedule;
pub mod score;

pub use error::{Error, Result};
