//! Simulation and discrimination of trapped-ion fluorescence readout.
//!
//! [`sim`] generates labeled, time-tagged photon events; [`featurize`] turns
//! them into count images and sequences; [`threshold`], [`nn`] and [`rnn`]
//! hold the discriminators; [`eval`] scores them.

pub mod config;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod featurize;
pub mod label;
pub mod nn;
pub mod rnn;
pub mod scalar;
pub mod sim;
pub mod threshold;

pub use error::{Error, Result};
pub use label::BasisLabel;
pub use scalar::Scalar;

/// Double-precision feed-forward classifier.
pub type Mlp = nn::MlpModel<f64>;
/// Single-precision feed-forward classifier.
pub type Mlp32 = nn::MlpModel<f32>;
/// Double-precision LSTM classifier.
pub type Lstm = rnn::LstmModel<f64>;
/// Single-precision LSTM classifier.
pub type Lstm32 = rnn::LstmModel<f32>;
pub type Adadelta = nn::AdadeltaState<f64>;
