use crate::error::{ensure_finite, Error, Result};

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// Applies one update in place. On error neither `params` nor the optimizer
    /// state is modified.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::dims("adam parameters", self.m.len(), params.len()));
        }
        if grads.len() != self.m.len() {
            return Err(Error::dims("adam gradients", self.m.len(), grads.len()));
        }
        ensure_finite(grads, || "adam gradients".to_string())?;

        let t = self.step + 1;
        let bc1 = 1.0 - self.beta1.powf(t as f64);
        let bc2 = 1.0 - self.beta2.powf(t as f64);
        let mut m = self.m.clone();
        let mut v = self.v.clone();
        let mut next = params.to_vec();
        for i in 0..next.len() {
            let g = grads[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            next[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        ensure_finite(&next, || format!("adam update at step {t}"))?;
        params.copy_from_slice(&next);
        self.m = m;
        self.v = v;
        self.step = t;
        Ok(())
    }
}
