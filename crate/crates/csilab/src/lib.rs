//! Unsupervised CSI denoising and compressed feedback for FDD massive MIMO.
//!
//! The crate covers the full loop: synthesize uplink/downlink channels with
//! shared multipath geometry, train a convolutional autoencoder on noisy
//! uplink observations only, run the encoder at the terminal side on noisy
//! downlink CSI, quantize and feed back the codeword, reconstruct denoised
//! downlink CSI at the base station, and score everything (NMSE, cosine
//! similarity, zero-forcing per-user rate) against an IDFT-truncation
//! baseline.
//!
//! Start from the `examples/` directory: each example is a runnable tour of
//! one capability. The `csilab` binary drives the same code from JSON
//! configs.

pub mod baseline;
pub mod channel;
pub mod codec;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
