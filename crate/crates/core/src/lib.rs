//! Fixed rank kriging with uncertain measurement locations.
//!
//! Observations `Y_k = Z(x_k − U_k) + ε_k` of a field
//! `Z(x) = t(x)ᵀα + s(x)ᵀη` are taken at reported locations `x_k` that are
//! off by an unobserved error `U_k ~ g`. The crate calibrates the model by
//! stochastic approximation EM and predicts with either the best linear
//! unbiased predictor or the conditional expectation predictor.

pub mod calibration;
pub mod config;
pub mod dense;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod model;
pub mod moments;
pub mod prediction;
pub mod rng;
pub mod sampler;
pub mod scenario;

pub use nalgebra;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use geometry::{BasisSet, BoundingBox, FieldLayout, Location};
pub use model::{KernelMatrices, LocationNoiseModel, ModelParams, ParamFile};
pub use scenario::{Dataset, ScenarioConfig};
