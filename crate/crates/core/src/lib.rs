//! Adaptive wavelet distillation.
//!
//! Learns an orthogonal wavelet filter bank by distilling a trained regressor:
//! the lowpass taps are optimized to jointly keep the transform invertible and
//! valid, keep coefficients sparse, and make the model's attributions in the
//! wavelet domain sparse.

// NaN-rejecting guards are written as `!(x > 0.0)`
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constraints;
pub mod distill;
pub mod error;
pub mod evalkit;
pub mod filters;
pub mod io;
pub mod nnet;
pub mod optim;
pub mod peakcount;
pub mod synth;
pub mod transform;
pub mod trim;

pub use error::{AwdError, Result};
