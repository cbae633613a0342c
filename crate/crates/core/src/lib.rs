//! Proactive breach forecasting for multi-agent reasoning logs.

pub mod bundle;
pub mod data;
pub mod detector;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub(crate) mod hashing;
pub mod manifold;
pub mod markov;
pub mod monitor;
pub mod nn;
pub mod pipeline;
pub mod proactive;
pub mod quantizer;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
