//! Monocular depth estimation as per-pixel classification.
//!
//! Depths are discretized into bins ([`depth`]), a small fully convolutional
//! residual network scores every pixel over the bins ([`tinynet`]) and is
//! trained with an information-gain weighted logistic loss ([`infogain`]).
//! Predictions are refined by a fully connected CRF with an ordinal label
//! penalty ([`densecrf`]) and scored with the usual depth metrics
//! ([`metrics`]).

pub mod commands;
pub mod config;
pub mod densecrf;
pub mod depth;
pub mod error;
pub mod format;
pub mod image;
pub mod infogain;
pub mod metrics;
pub mod synth;
pub mod tinynet;

pub use error::{Error, Result};
