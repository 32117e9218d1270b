use super::Mlp;
use crate::error::{Error, Result};

/// Polyak-averaged shadow copy of a network: `shadow <- (1 - tau) shadow + tau online`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaTracker {
    shadow: Mlp,
    tau: f64,
}

impl EmaTracker {
    /// Starts with a copy of `online`.
    pub fn new(online: &Mlp, tau: f64) -> Result<Self> {
        Self::with_shadow(online.clone(), tau)
    }

    pub fn with_shadow(shadow: Mlp, tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidParameter(format!(
                "ema tau must lie in [0, 1], got {tau}"
            )));
        }
        Ok(Self { shadow, tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn shadow(&self) -> &Mlp {
        &self.shadow
    }

    pub fn update(&mut self, online: &Mlp) -> Result<()> {
        if online.sizes() != self.shadow.sizes() {
            return Err(Error::dims(
                "ema parameters",
                self.shadow.num_params(),
                online.num_params(),
            ));
        }
        let tau = self.tau;
        for (s, &o) in self.shadow.params_mut().iter_mut().zip(online.params()) {
            *s = (1.0 - tau) * *s + tau * o;
        }
        Ok(())
    }
}
