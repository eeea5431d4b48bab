//! Bayesian autoencoder anomaly detection: posterior NLL scores, anomaly
//! probabilities, uncertainty decomposition and rejection-curve evaluation.

pub mod calibration;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod matrix;
pub mod models;
pub mod nn;
pub mod rng;
pub mod uncertainty;

pub use error::{BaeError, Result};
pub use matrix::RealMatrix;
pub use rng::RngStream;
