use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use crate::critic::{
    draw_noise, integrate, repeat_rows, CriticEnsemble, LossAndGrad, MonolithicCritic,
    NoiseInterval, Velocity,
};
use crate::error::{Error, Result};
use crate::nn::Mlp;

/// Critic over `[state, action]` rows that also exposes `dQ/da`.
pub trait ActionCritic {
    /// Values `Q(s_i, a_i)` and gradients `dQ/da` (`[rows x action_dim]`).
    fn value_and_action_grad(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<(Vec<f64>, Array2<f64>)>;
}

/// Noise-free critic regressed onto the integrated flow critic.
#[derive(Debug, Clone, PartialEq)]
pub struct DistilledCritic {
    pub body: MonolithicCritic,
}

impl DistilledCritic {
    pub fn new(cond_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            body: MonolithicCritic::new(cond_dim, hidden, rng)?,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.body.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.body.net
    }

    pub fn predict(&self, cond: ArrayView2<f64>) -> Result<Vec<f64>> {
        self.body.predict(cond)
    }
}

impl ActionCritic for DistilledCritic {
    fn value_and_action_grad(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<(Vec<f64>, Array2<f64>)> {
        net_value_and_action_grad(&self.body.net, states, actions)
    }
}

/// Member-averaged values and action gradients.
impl ActionCritic for CriticEnsemble {
    fn value_and_action_grad(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<(Vec<f64>, Array2<f64>)> {
        let k = self.len() as f64;
        let mut q = vec![0.0; states.nrows()];
        let mut g = Array2::zeros(actions.raw_dim());
        for member in &self.members {
            let (qm, gm) = net_value_and_action_grad(&member.net, states, actions)?;
            for (a, b) in q.iter_mut().zip(qm) {
                *a += b / k;
            }
            g.scaled_add(1.0 / k, &gm);
        }
        Ok((q, g))
    }
}

fn net_value_and_action_grad(
    net: &Mlp,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = states.nrows();
    let ds = states.ncols();
    if actions.nrows() != n {
        return Err(Error::dims("critic action rows", n, actions.nrows()));
    }
    let mut cond = Array2::zeros((n, ds + actions.ncols()));
    cond.slice_mut(s![.., ..ds]).assign(&states);
    cond.slice_mut(s![.., ds..]).assign(&actions);
    let tape = net.forward_train(cond.view())?;
    let q = tape.output().column(0).to_vec();
    let grads = net.backward(&tape, Array2::ones((n, 1)).view())?;
    Ok((q, grads.input.slice(s![.., ds..]).to_owned()))
}

/// `mean (Q_distill(s, a) - Q_flow(s, a, z0))^2` over rows and `num_noise`
/// draws per row, with the flow side integrated for `steps` steps and held
/// constant. Gradients are w.r.t. the distilled critic only.
pub fn distill_loss(
    distill: &DistilledCritic,
    field: &dyn Velocity,
    cond: ArrayView2<f64>,
    noise: NoiseInterval,
    steps: usize,
    num_noise: usize,
    rng: &mut impl Rng,
) -> Result<LossAndGrad> {
    let n = cond.nrows();
    if n == 0 || num_noise == 0 {
        return Err(Error::InvalidParameter(
            "distill loss needs rows and noise draws".into(),
        ));
    }
    let z0 = draw_noise(rng, noise, n * num_noise);
    let rep = repeat_rows(cond, num_noise);
    let flow = integrate(field, rep.view(), &z0, steps)?.final_values();
    let tape = distill.body.net.forward_train(cond)?;
    let pred = tape.output();
    let total = (n * num_noise) as f64;
    let mut loss = 0.0;
    let mut g = Array2::zeros((n, 1));
    for i in 0..n {
        for q in &flow[i * num_noise..(i + 1) * num_noise] {
            let r = pred[[i, 0]] - q;
            loss += r * r;
            g[[i, 0]] += 2.0 * r / total;
        }
    }
    loss /= total;
    if !loss.is_finite() {
        return Err(Error::NonFinite("distill loss".into()));
    }
    let grads = distill.body.net.backward(&tape, g.view())?;
    Ok(LossAndGrad {
        loss,
        grads: grads.params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critic::{ConstantField, FnField};
    use crate::nn::Activation;
    use crate::rng::stream;
    use ndarray::{array, ArrayView1};

    fn constant_distill(c: f64) -> DistilledCritic {
        let net = Mlp::from_params(&[2, 1], Activation::Identity, vec![0.0, 0.0, c]).unwrap();
        DistilledCritic {
            body: MonolithicCritic::from_net(net).unwrap(),
        }
    }

    #[test]
    fn matching_the_flow_mean_leaves_the_noise_variance() {
        // Constant field 1: Q_flow = z0 + 1 with z0 ~ U[-2, 0]; mean 0, variance 1/3.
        let noise = NoiseInterval {
            lower: -2.0,
            upper: 0.0,
        };
        let cond = array![[0.0, 0.0]];
        let n = 20_000;
        let g = distill_loss(
            &constant_distill(0.0),
            &ConstantField(1.0),
            cond.view(),
            noise,
            4,
            n,
            &mut stream(0, "d"),
        )
        .unwrap();
        assert!((g.loss - 1.0 / 3.0).abs() < 0.01, "{}", g.loss);
    }

    #[test]
    fn zero_width_noise_is_fit_exactly() {
        let noise = NoiseInterval {
            lower: -1.0,
            upper: -1.0,
        };
        let field = FnField(|_t: f64, _z: f64, _c: ArrayView1<f64>| 3.0);
        let g = distill_loss(
            &constant_distill(2.0),
            &field,
            array![[1.0, 0.0]].view(),
            noise,
            8,
            3,
            &mut stream(0, "d"),
        )
        .unwrap();
        assert!(g.loss < 1e-28);
    }

    #[test]
    fn action_gradient_of_linear_critic() {
        let net = Mlp::from_params(&[2, 1], Activation::Identity, vec![0.5, -2.0, 1.0]).unwrap();
        let critic = DistilledCritic {
            body: MonolithicCritic::from_net(net).unwrap(),
        };
        let (q, g) = critic
            .value_and_action_grad(array![[1.0], [0.0]].view(), array![[1.0], [3.0]].view())
            .unwrap();
        assert_eq!(q, vec![-0.5, -5.0]);
        assert_eq!(g, array![[-2.0], [-2.0]]);
    }
}
