//! Adaptive momentum-based variance-reduced stochastic optimization.
//!
//! The crate is layered bottom-up:
//!
//! * [`numerics`] - dense vectors/matrices and keyed RNG streams,
//! * [`problems`] - synthetic objectives with stochastic oracles,
//! * [`estimators`] - the recursive gradient estimators as pure updates,
//! * [`schedules`] - adaptive step-size and momentum laws,
//! * [`optimizers`] - full iteration loops producing traces,
//! * [`analysis`] - sandwich inequality, slope fits and summaries.

pub mod analysis;
pub mod error;
pub mod estimators;
pub mod numerics;
pub mod optimizers;
pub mod problems;
pub mod schedules;

pub use error::{Error, Result};
pub use numerics::{DenseMatrix, DenseVector, RngStream};
pub use optimizers::{RunConfig, RunRecord, RunSpec, SvrgOptions, TraceRow};
pub use problems::{
    CompositionalProblem, FiniteSumProblem, Objective, ProblemMeta, StochasticProblem,
};
