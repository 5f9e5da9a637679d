//! Stochastic spintronic neurons, stochastic computing and polar-code decoding.

pub mod bitstream;
pub mod device;
pub mod error;
pub mod harness;
pub mod llgs;
pub mod network;
pub mod polar;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
