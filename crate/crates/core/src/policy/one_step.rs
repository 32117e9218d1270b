use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use super::{standard_normal, ActionBox, ActionCritic, BcFlowPolicy};
use crate::critic::LossAndGrad;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};

/// Direct policy `mu(s, x)` with `x ~ N(0, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OneStepPolicy {
    pub net: Mlp,
    pub state_dim: usize,
    pub action_dim: usize,
    pub bounds: ActionBox,
}

impl OneStepPolicy {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        bounds: ActionBox,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        Self::from_net(
            Mlp::new(&sizes, Activation::Gelu, rng)?,
            state_dim,
            action_dim,
            bounds,
        )
    }

    pub fn from_net(
        net: Mlp,
        state_dim: usize,
        action_dim: usize,
        bounds: ActionBox,
    ) -> Result<Self> {
        if net.input_dim() != state_dim + action_dim || net.output_dim() != action_dim {
            return Err(Error::dims(
                "one-step policy network input",
                state_dim + action_dim,
                net.input_dim(),
            ));
        }
        Ok(Self {
            net,
            state_dim,
            action_dim,
            bounds,
        })
    }

    fn inputs(&self, states: ArrayView2<f64>, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if states.ncols() != self.state_dim || x.dim() != (states.nrows(), self.action_dim) {
            return Err(Error::dims(
                "one-step policy inputs",
                self.state_dim + self.action_dim,
                states.ncols() + x.ncols(),
            ));
        }
        let mut inputs = Array2::zeros((states.nrows(), self.state_dim + self.action_dim));
        inputs.slice_mut(s![.., ..self.state_dim]).assign(&states);
        inputs.slice_mut(s![.., self.state_dim..]).assign(&x);
        Ok(inputs)
    }

    /// Unclipped outputs for the given noise.
    pub fn actions(&self, states: ArrayView2<f64>, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.net.forward_batch(self.inputs(states, x)?.view())
    }

    /// Fresh noise, clipped to the action box.
    pub fn sample(&self, states: ArrayView2<f64>, rng: &mut impl Rng) -> Result<Array2<f64>> {
        let x = standard_normal(rng, states.nrows(), self.action_dim);
        let mut a = self.actions(states, x.view())?;
        self.bounds.clip(&mut a);
        Ok(a)
    }
}

/// `mean_i [-Q(s_i, mu(s_i, x_i)) + alpha ||mu(s_i, x_i) - pi_bc(s_i, x_i)||^2]`
/// with explicit noise `x` shared by both policies. Gradients are w.r.t. the
/// one-step policy only.
pub fn one_step_policy_loss_with(
    policy: &OneStepPolicy,
    bc: &BcFlowPolicy,
    critic: &dyn ActionCritic,
    states: ArrayView2<f64>,
    x: ArrayView2<f64>,
    alpha: f64,
) -> Result<LossAndGrad> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must be non-negative, got {alpha}"
        )));
    }
    let n = states.nrows();
    if n == 0 {
        return Err(Error::InvalidParameter(
            "policy loss on an empty batch".into(),
        ));
    }
    let inputs = policy.inputs(states, x)?;
    let tape = policy.net.forward_train(inputs.view())?;
    let actions = tape.output();
    let target = bc.flow_actions(states, x)?;
    let (q, dq) = critic.value_and_action_grad(states, actions.view())?;
    let diff = actions - &target;
    let loss = (-q.iter().sum::<f64>() + alpha * diff.mapv(|d| d * d).sum()) / n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("one-step policy loss".into()));
    }
    let g = (diff * (2.0 * alpha) - dq) / n as f64;
    let grads = policy.net.backward(&tape, g.view())?;
    Ok(LossAndGrad {
        loss,
        grads: grads.params,
    })
}

pub fn one_step_policy_loss(
    policy: &OneStepPolicy,
    bc: &BcFlowPolicy,
    critic: &dyn ActionCritic,
    states: ArrayView2<f64>,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<LossAndGrad> {
    let x = standard_normal(rng, states.nrows(), policy.action_dim);
    one_step_policy_loss_with(policy, bc, critic, states, x.view(), alpha)
}
