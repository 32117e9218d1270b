//! Dense networks with hand-written backprop, Adam, EMA targets and checkpoints.
//!
//! Parameters live in one flat `Vec<f64>` per network so that optimizers, target
//! averaging and checkpointing can treat them uniformly.

mod adam;
mod checkpoint;
mod ema;
mod mlp;

pub use adam::Adam;
pub use checkpoint::{load_network, save_network, NETWORK_MAGIC};
pub use ema::EmaTracker;
pub use mlp::{Activation, Gradients, Mlp, Tape};

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Exact GELU, `x * Phi(x)`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}
