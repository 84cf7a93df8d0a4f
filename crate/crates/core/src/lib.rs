//! Gesture-conditioned mmWave sensing channel model.
//!
//! The crate turns keypoint trajectories and single-bounce multipath records
//! into labeled scattering-point corpora, learns a per-body-part generative
//! model of those points, and synthesizes channel impulse responses, delay
//! profiles and micro-Doppler spectrograms from either measured or generated
//! points. A synthetic ground-truth generator stands in for measured data.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod skeleton;
pub mod scatter_geom;
pub mod nnkit;
pub mod clustering;
pub mod stats;
pub mod synthgen;
pub mod channel;
pub mod poisson_model;
pub mod cvae_model;
pub mod evaluation;

pub use error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Speed of light in vacuum, m/s.
pub const C0: f64 = 299_792_458.0;

/// Stamp written into every output file header.
pub const PIPELINE_VERSION: &str = concat!("gesture-channel/", env!("CARGO_PKG_VERSION"));

/// Numerical floor used inside logarithms.
pub const LOG_EPS: f64 = 1e-8;
