//! Seasonal and contextual LSTM forecasters for univariate anomaly detection.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod series;
pub mod spectral;
pub mod synth;
pub mod trainer;
pub mod wavelet;

pub use error::{Error, Result};
