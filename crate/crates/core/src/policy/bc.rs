use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use super::{standard_normal, ActionBox};
use crate::critic::LossAndGrad;
use crate::encodings::TimeEncoding;
use crate::error::{ensure_finite, Error, Result};
use crate::nn::{Activation, Mlp};

pub const DEFAULT_ACTOR_FLOW_STEPS: usize = 10;

/// Flow-matching behavior policy: `w(t, x | s)` transports `x(0) ~ N(0, I)` to
/// dataset actions over `steps` Euler steps.
#[derive(Debug, Clone, PartialEq)]
pub struct BcFlowPolicy {
    pub net: Mlp,
    pub state_dim: usize,
    pub action_dim: usize,
    pub time: TimeEncoding,
    pub steps: usize,
    pub bounds: ActionBox,
}

impl BcFlowPolicy {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        time: TimeEncoding,
        steps: usize,
        bounds: ActionBox,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim + action_dim + time.dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        Self::from_net(
            Mlp::new(&sizes, Activation::Gelu, rng)?,
            state_dim,
            action_dim,
            time,
            steps,
            bounds,
        )
    }

    pub fn from_net(
        net: Mlp,
        state_dim: usize,
        action_dim: usize,
        time: TimeEncoding,
        steps: usize,
        bounds: ActionBox,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter(
                "actor flow needs at least one step".into(),
            ));
        }
        let input = state_dim + action_dim + time.dim();
        if net.input_dim() != input || net.output_dim() != action_dim {
            return Err(Error::dims(
                "BC policy network input",
                input,
                net.input_dim(),
            ));
        }
        Ok(Self {
            net,
            state_dim,
            action_dim,
            time,
            steps,
            bounds,
        })
    }

    fn inputs(
        &self,
        states: ArrayView2<f64>,
        x: ArrayView2<f64>,
        t: &[f64],
    ) -> Result<Array2<f64>> {
        let n = states.nrows();
        if states.ncols() != self.state_dim {
            return Err(Error::dims(
                "BC policy states",
                self.state_dim,
                states.ncols(),
            ));
        }
        if x.dim() != (n, self.action_dim) {
            return Err(Error::dims(
                "BC policy action inputs",
                self.action_dim,
                x.ncols(),
            ));
        }
        let (ds, da) = (self.state_dim, self.action_dim);
        let mut inputs = Array2::zeros((n, self.net.input_dim()));
        inputs.slice_mut(s![.., ..ds]).assign(&states);
        inputs.slice_mut(s![.., ds..ds + da]).assign(&x);
        let mut emb = vec![0.0; self.time.dim()];
        let mut last = f64::NAN;
        for (i, &ti) in t.iter().enumerate() {
            if ti != last {
                self.time.encode_into(ti, &mut emb);
                last = ti;
            }
            for (dst, src) in inputs.row_mut(i).as_slice_mut().expect("row")[ds + da..]
                .iter_mut()
                .zip(&emb)
            {
                *dst = *src;
            }
        }
        Ok(inputs)
    }

    pub fn velocity(
        &self,
        states: ArrayView2<f64>,
        x: ArrayView2<f64>,
        t: &[f64],
    ) -> Result<Array2<f64>> {
        self.net.forward_batch(self.inputs(states, x, t)?.view())
    }

    /// Euler-integrates from the given `x(0)` rows; the result is not clipped.
    pub fn flow_actions(
        &self,
        states: ArrayView2<f64>,
        x0: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        let n = states.nrows();
        let mut x = x0.to_owned();
        let dt = 1.0 / self.steps as f64;
        for i in 0..self.steps {
            let t = vec![i as f64 * dt; n];
            let v = self.velocity(states, x.view(), &t)?;
            x.scaled_add(dt, &v);
        }
        ensure_finite(x.as_slice().expect("contiguous"), || {
            "BC flow action".to_string()
        })?;
        Ok(x)
    }

    /// Draws `x(0) ~ N(0, I)` once per row, integrates and clips to the box.
    pub fn sample(&self, states: ArrayView2<f64>, rng: &mut impl Rng) -> Result<Array2<f64>> {
        let x0 = standard_normal(rng, states.nrows(), self.action_dim);
        let mut a = self.flow_actions(states, x0.view())?;
        self.bounds.clip(&mut a);
        Ok(a)
    }
}

/// `mean_i ||w(t_i, x_i(t_i) | s_i) - (a_i - x0_i)||^2` with explicit draws.
pub fn bc_flow_loss_with(
    policy: &BcFlowPolicy,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    x0: ArrayView2<f64>,
    t: &[f64],
) -> Result<LossAndGrad> {
    let n = states.nrows();
    if n == 0 {
        return Err(Error::InvalidParameter("BC loss on an empty batch".into()));
    }
    if actions.dim() != (n, policy.action_dim) || x0.dim() != actions.dim() || t.len() != n {
        return Err(Error::dims("BC batch", n, actions.nrows().min(t.len())));
    }
    let mut xt = x0.to_owned();
    for (i, mut row) in xt.rows_mut().into_iter().enumerate() {
        let ti = t[i];
        for (x, a) in row.iter_mut().zip(actions.row(i)) {
            *x = (1.0 - ti) * *x + ti * a;
        }
    }
    let inputs = policy.inputs(states, xt.view(), t)?;
    let tape = policy.net.forward_train(inputs.view())?;
    let residual = tape.output() - &(&actions - &x0);
    let loss = residual.mapv(|r| r * r).sum() / n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("BC flow loss".into()));
    }
    let g = residual * (2.0 / n as f64);
    let grads = policy.net.backward(&tape, g.view())?;
    Ok(LossAndGrad {
        loss,
        grads: grads.params,
    })
}

/// Flow-matching behavior cloning loss with fresh `x(0) ~ N(0, I)` and
/// `t ~ U[0, 1]` per row.
pub fn bc_flow_loss(
    policy: &BcFlowPolicy,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    rng: &mut impl Rng,
) -> Result<LossAndGrad> {
    let n = states.nrows();
    let x0 = standard_normal(rng, n, policy.action_dim);
    let t: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    bc_flow_loss_with(policy, states, actions, x0.view(), &t)
}
