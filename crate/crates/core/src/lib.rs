//! WiFi RSS fingerprinting for indoor localisation.
//!
//! Scans are turned into square fingerprint images ([`encoder`]), classified
//! by a from-scratch convolutional network ([`wifinet`]) or classic
//! baselines ([`baselines`]), and evaluated on synthetic radio environments
//! ([`synth`], [`eval`]).

pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod models;
pub mod nn;
pub mod predictor;
pub mod synth;
pub mod wifinet;

pub use error::{Error, Result};
