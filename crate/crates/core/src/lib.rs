//! Fairness-aware federated learning on a desk-scale simulator.
//!
//! The numerical core ([`scalarize`], [`bargain`], [`model`]) is generic over
//! [`Scalar`] (`f32` or `f64`); the data generators, the training engine and
//! the metrics operate on `f64`, exposed through the aliases below.

// `!(x > 0)` guards reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bargain;
pub mod datagen;
pub mod error;
pub mod fedsim;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod scalarize;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ScalarizerSpec = scalarize::ScalarizerSpec<f64>;
pub type LossVector = scalarize::LossVector<f64>;
pub type UtilityProfile = bargain::UtilityProfile<f64>;
pub type Sample = model::Sample<f64>;
pub type ModelParams = model::ModelParams<f64>;

pub type ScalarizerSpecF32 = scalarize::ScalarizerSpec<f32>;
pub type LossVectorF32 = scalarize::LossVector<f32>;
pub type UtilityProfileF32 = bargain::UtilityProfile<f32>;
pub type SampleF32 = model::Sample<f32>;
pub type ModelParamsF32 = model::ModelParams<f32>;
