//! Flow-matching Q-functions.
//!
//! A critic is represented as a scalar velocity field `v(t, z | s, a)`; integrating it
//! with Euler steps from uniform noise `z(0) ~ U[l, u]` yields a Q-value. The crate
//! contains everything needed to train and check such critics at desk scale:
//!
//! * [`nn`]: dense networks with exact GELU, manual backprop, Adam and EMA targets.
//! * [`encodings`]: HL-Gauss interpolant encoding and Fourier time embedding.
//! * [`critic`]: the velocity-field critic, its flow-matching TD loss, and the
//!   monolithic / ensemble baselines.
//! * [`policy`]: behavior-cloning flow policy, one-step policy and distilled critic.
//! * [`envs`]: toy MDPs, behavior policies and the offline dataset format.
//! * [`oracles`]: value iteration and Monte-Carlo evaluation used as ground truth.
//! * [`harness`]: configuration, the training loop, ablations and metrics.

pub mod critic;
pub mod encodings;
pub mod envs;
pub mod error;
pub mod harness;
pub mod nn;
pub mod oracles;
pub mod policy;
pub mod rng;

pub use error::{Error, Result};
