//! Robust data hiding against lossy compression.
//!
//! Trains a convolutional encoder/decoder pair to embed short binary
//! messages in images so that the message survives real lossy codecs.
//! The attack layer forwards the output of the true (non-differentiable)
//! codec while routing the backward pass through an identity path, so any
//! compressor — the built-in JPEG round trip or an arbitrary external
//! command — can sit inside a gradient-trained pipeline. Differentiable
//! JPEG surrogates (coefficient masking, stochastic coefficient dropping,
//! polynomial rounding) are included as training baselines.

pub mod attack;
pub mod codec;
pub mod error;
pub mod harness;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};
