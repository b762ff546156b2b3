//! Pattern-of-life segmentation of satellite positional time series with a
//! conditional diffusion model: synthetic data generation, training,
//! skipped-step inference, and segmental evaluation.

pub mod config;
pub mod data;
pub mod decoder;
pub mod diffusion;
pub mod domain;
pub mod engine;
pub mod harness;
pub mod encoder;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod plot;

pub use error::{Error, Result};
