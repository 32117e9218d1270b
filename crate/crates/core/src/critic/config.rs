use serde::{Deserialize, Serialize};

use crate::encodings::{
    FourierTimeEmbedding, HlGauss, InterpolantEncoding, SigmaSpec, TimeEncoding, DEFAULT_NUM_BINS,
    DEFAULT_TIME_DIM,
};
use crate::error::{Error, Result};

/// Range of achievable Q-values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub q_min: f64,
    pub q_max: f64,
}

impl ValueRange {
    pub fn new(q_min: f64, q_max: f64) -> Result<Self> {
        if !(q_min < q_max && q_min.is_finite() && q_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "value range needs q_min < q_max, got [{q_min}, {q_max}]"
            )));
        }
        Ok(Self { q_min, q_max })
    }

    /// `[r_min / (1 - gamma), r_max / (1 - gamma)]`.
    pub fn from_rewards(r_min: f64, r_max: f64, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in [0, 1), got {gamma}"
            )));
        }
        Self::new(r_min / (1.0 - gamma), r_max / (1.0 - gamma))
    }

    pub fn width(&self) -> f64 {
        self.q_max - self.q_min
    }
}

/// Support `[lower, upper]` of the initial noise `z(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseInterval {
    pub lower: f64,
    pub upper: f64,
}

impl NoiseInterval {
    /// `u = Q_max`, `l = u - kappa (Q_max - Q_min)`.
    pub fn from_kappa(range: ValueRange, kappa: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&kappa) {
            return Err(Error::InvalidParameter(format!(
                "kappa must lie in [0, 1], got {kappa}"
            )));
        }
        Ok(Self {
            lower: range.q_max - kappa * range.width(),
            upper: range.q_max,
        })
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowLossKind {
    /// Supervise the velocity at `t ~ U[0, 1]` and integrate with `K` steps.
    Full,
    /// Supervise only at `t = 0` and integrate with a single step.
    T0Only,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowCriticConfig {
    /// Euler steps `K`.
    pub flow_steps: usize,
    /// Target noise samples `m`.
    pub target_samples: usize,
    pub noise: NoiseInterval,
    pub value_range: ValueRange,
    pub gamma: f64,
    pub tau: f64,
    pub interpolant: InterpolantEncoding,
    pub time: TimeEncoding,
    pub clipped_double_q: bool,
    /// Euler steps used when integrating the flow for the distillation target.
    pub distill_steps: usize,
    pub loss: FlowLossKind,
}

impl FlowCriticConfig {
    /// Defaults: `K = 8`, `m = 8`, `kappa = 0.1`, `tau = 0.005`, 65-bin HL-Gauss,
    /// 64-dim Fourier time embedding.
    pub fn with_defaults(value_range: ValueRange, gamma: f64) -> Result<Self> {
        Ok(Self {
            flow_steps: 8,
            target_samples: 8,
            noise: NoiseInterval::from_kappa(value_range, 0.1)?,
            value_range,
            gamma,
            tau: 0.005,
            interpolant: InterpolantEncoding::HlGauss(HlGauss::for_value_range(
                DEFAULT_NUM_BINS,
                value_range.q_min,
                value_range.q_max,
                SigmaSpec::default(),
            )?),
            time: TimeEncoding::Fourier(FourierTimeEmbedding::new(DEFAULT_TIME_DIM)?),
            clipped_double_q: false,
            distill_steps: 8,
            loss: FlowLossKind::Full,
        })
    }

    /// `(u - l) / (Q_max - Q_min)`.
    pub fn kappa(&self) -> f64 {
        self.noise.width() / self.value_range.width()
    }

    /// Euler steps used for targets and Q estimates.
    pub fn integration_steps(&self) -> usize {
        match self.loss {
            FlowLossKind::Full => self.flow_steps,
            FlowLossKind::T0Only => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.flow_steps == 0 || self.target_samples == 0 || self.distill_steps == 0 {
            return bad("K, m and K_distill must be at least 1".into());
        }
        if !(self.noise.lower <= self.noise.upper) {
            return bad(format!(
                "noise interval needs l <= u, got [{}, {}]",
                self.noise.lower, self.noise.upper
            ));
        }
        let tol = 1e-9 * self.value_range.width().max(1.0);
        if self.noise.upper > self.value_range.q_max + tol {
            return bad(format!(
                "noise upper bound {} exceeds Q_max {}",
                self.noise.upper, self.value_range.q_max
            ));
        }
        if self.noise.width() > self.value_range.width() + tol {
            return bad("noise interval is wider than the value range".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_hyperparameters() {
        let range = ValueRange::from_rewards(-1.0, 0.0, 0.99).unwrap();
        let cfg = FlowCriticConfig::with_defaults(range, 0.99).unwrap();
        assert_eq!(cfg.flow_steps, 8);
        assert_eq!(cfg.target_samples, 8);
        assert_eq!(cfg.tau, 0.005);
        assert_eq!(cfg.time.dim(), 64);
        assert!((cfg.kappa() - 0.1).abs() < 1e-12);
        assert_eq!(cfg.noise.upper, 0.0);
        assert!((cfg.noise.lower + 10.0).abs() < 1e-9);
        cfg.validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_intervals() {
        let range = ValueRange::new(-10.0, 0.0).unwrap();
        let mut cfg = FlowCriticConfig::with_defaults(range, 0.9).unwrap();
        cfg.noise = NoiseInterval {
            lower: -1.0,
            upper: 1.0,
        };
        assert!(cfg.validate().is_err());
        cfg.noise = NoiseInterval {
            lower: -20.0,
            upper: 0.0,
        };
        assert!(cfg.validate().is_err());
        cfg.noise = NoiseInterval {
            lower: 0.0,
            upper: -1.0,
        };
        assert!(cfg.validate().is_err());
        cfg.noise = NoiseInterval {
            lower: -1.0,
            upper: -1.0,
        };
        cfg.validate().unwrap();
        cfg.flow_steps = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn t0_only_integrates_once() {
        let range = ValueRange::new(-10.0, 0.0).unwrap();
        let mut cfg = FlowCriticConfig::with_defaults(range, 0.9).unwrap();
        assert_eq!(cfg.integration_steps(), 8);
        cfg.loss = FlowLossKind::T0Only;
        assert_eq!(cfg.integration_steps(), 1);
    }
}
