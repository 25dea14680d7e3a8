//! Distance-based sound separation toolkit.
//!
//! Synthesizes reverberant multi-speaker scenes with near/far targets
//! relative to a distance threshold, separates mixtures by STFT masking
//! (oracle masks or a small trainable recurrent mask estimator), and scores
//! the results.

pub mod acoustics;
pub mod config;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rir;
pub mod rng;
pub mod sampler;
pub mod scene;
pub mod separator;

pub use error::{Error, Result};
