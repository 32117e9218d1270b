//! Actor stack: a behavior-cloning flow policy, a one-step noise-conditioned
//! policy and a distilled (noise-free) critic used for its gradients.

mod bc;
mod distill;
mod one_step;

pub use bc::{bc_flow_loss, bc_flow_loss_with, BcFlowPolicy, DEFAULT_ACTOR_FLOW_STEPS};
pub use distill::{distill_loss, ActionCritic, DistilledCritic};
pub use one_step::{one_step_policy_loss, one_step_policy_loss_with, OneStepPolicy};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Box `[low, high]` applied to every action coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionBox {
    pub low: f64,
    pub high: f64,
}

impl ActionBox {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low < high) {
            return Err(Error::InvalidParameter(format!(
                "empty action box [{low}, {high}]"
            )));
        }
        Ok(Self { low, high })
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }

    pub fn clip(&self, actions: &mut Array2<f64>) {
        actions.mapv_inplace(|a| a.clamp(self.low, self.high));
    }
}

/// `[rows x dim]` standard-normal draws, row-major.
pub fn standard_normal(rng: &mut impl Rng, rows: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, dim), || StandardNormal.sample(rng))
}
