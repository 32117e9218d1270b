use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::LossAndGrad;
use crate::error::{ensure_finite, Error, Result};
use crate::nn::{Activation, EmaTracker, Mlp};

/// Feed-forward `[s, a] -> Q` network.
#[derive(Debug, Clone, PartialEq)]
pub struct MonolithicCritic {
    pub net: Mlp,
}

impl MonolithicCritic {
    pub fn new(cond_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut sizes = vec![cond_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Ok(Self {
            net: Mlp::new(&sizes, Activation::Gelu, rng)?,
        })
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        if net.output_dim() != 1 {
            return Err(Error::dims("critic output", 1, net.output_dim()));
        }
        Ok(Self { net })
    }

    pub fn predict(&self, cond: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.net.forward_batch(cond)?.into_raw_vec_and_offset().0)
    }
}

/// `n` independently initialized critics with EMA targets; predictions average
/// the members. `n = 1` is the plain monolithic baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticEnsemble {
    pub members: Vec<MonolithicCritic>,
    targets: Vec<EmaTracker>,
}

impl CriticEnsemble {
    pub fn new(
        size: usize,
        cond_dim: usize,
        hidden: &[usize],
        tau: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidParameter(
                "ensemble needs at least one member".into(),
            ));
        }
        let members = (0..size)
            .map(|_| MonolithicCritic::new(cond_dim, hidden, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::from_members(members, tau)
    }

    /// Targets start as copies of the members.
    pub fn from_members(members: Vec<MonolithicCritic>, tau: f64) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidParameter(
                "ensemble needs at least one member".into(),
            ));
        }
        let targets = members
            .iter()
            .map(|m| EmaTracker::new(&m.net, tau))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { members, targets })
    }

    pub fn from_parts(members: Vec<MonolithicCritic>, targets: Vec<Mlp>, tau: f64) -> Result<Self> {
        if members.len() != targets.len() || members.is_empty() {
            return Err(Error::dims(
                "ensemble targets",
                members.len(),
                targets.len(),
            ));
        }
        let targets = targets
            .into_iter()
            .map(|t| EmaTracker::with_shadow(t, tau))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { members, targets })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn target_nets(&self) -> Vec<&Mlp> {
        self.targets.iter().map(|t| t.shadow()).collect()
    }

    pub fn predict(&self, cond: ArrayView2<f64>) -> Result<Vec<f64>> {
        mean_prediction(self.members.iter().map(|m| &m.net), cond)
    }

    pub fn predict_target(&self, cond: ArrayView2<f64>) -> Result<Vec<f64>> {
        mean_prediction(self.targets.iter().map(|t| t.shadow()), cond)
    }

    pub fn update_targets(&mut self) -> Result<()> {
        for (t, m) in self.targets.iter_mut().zip(&self.members) {
            t.update(&m.net)?;
        }
        Ok(())
    }
}

fn mean_prediction<'a>(
    nets: impl Iterator<Item = &'a Mlp>,
    cond: ArrayView2<f64>,
) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; cond.nrows()];
    let mut count = 0usize;
    for net in nets {
        let out = net.forward_batch(cond)?;
        for (s, o) in sum.iter_mut().zip(out.iter()) {
            *s += o;
        }
        count += 1;
    }
    Ok(sum.into_iter().map(|s| s / count as f64).collect())
}

/// `y = r + gamma * mean_i Qbar_i(s', a')`, with terminal rows equal to `r`.
pub fn monolithic_targets(
    ensemble: &CriticEnsemble,
    rewards: &[f64],
    terminals: &[bool],
    next_cond: ArrayView2<f64>,
    gamma: f64,
) -> Result<Vec<f64>> {
    let next = ensemble.predict_target(next_cond)?;
    let y: Vec<f64> = rewards
        .iter()
        .zip(terminals)
        .zip(next)
        .map(|((&r, &done), q)| if done { r } else { r + gamma * q })
        .collect();
    ensure_finite(&y, || "monolithic targets".to_string())?;
    Ok(y)
}

/// Squared TD error `mean (Q_i(s, a) - y)^2` for every member against the shared
/// targets. Returns the mean member loss and one gradient per member.
pub fn monolithic_td_loss(
    ensemble: &CriticEnsemble,
    cond: ArrayView2<f64>,
    y: &[f64],
) -> Result<(f64, Vec<LossAndGrad>)> {
    let n = cond.nrows();
    if y.len() != n {
        return Err(Error::dims("TD targets", n, y.len()));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("TD loss on an empty batch".into()));
    }
    let mut out = Vec::with_capacity(ensemble.len());
    for member in &ensemble.members {
        let tape = member.net.forward_train(cond)?;
        let pred = tape.output();
        let mut g = Array2::zeros((n, 1));
        let mut loss = 0.0;
        for i in 0..n {
            let r = pred[[i, 0]] - y[i];
            loss += r * r;
            g[[i, 0]] = 2.0 * r / n as f64;
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("monolithic TD loss".into()));
        }
        let grads = member.net.backward(&tape, g.view())?;
        out.push(LossAndGrad {
            loss,
            grads: grads.params,
        });
    }
    let mean = out.iter().map(|l| l.loss).sum::<f64>() / out.len() as f64;
    Ok((mean, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::array;

    #[test]
    fn exact_critic_has_zero_loss() {
        let net = Mlp::from_params(&[2, 1], Activation::Identity, vec![1.0, 1.0, 0.0]).unwrap();
        let ens =
            CriticEnsemble::from_members(vec![MonolithicCritic::from_net(net).unwrap()], 0.005)
                .unwrap();
        let cond = array![[1.0, 2.0], [0.5, -0.5]];
        let (loss, grads) = monolithic_td_loss(&ens, cond.view(), &[3.0, 0.0]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads[0].grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn identical_members_average_to_any_member() {
        let member = MonolithicCritic::new(3, &[8], &mut stream(0, "m")).unwrap();
        let ens = CriticEnsemble::from_members(vec![member.clone(); 4], 0.005).unwrap();
        let cond = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.0]];
        let single = member.predict(cond.view()).unwrap();
        let mean = ens.predict(cond.view()).unwrap();
        for (a, b) in single.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn ensemble_members_are_independent() {
        let ens = CriticEnsemble::new(2, 3, &[8], 0.005, &mut stream(0, "m")).unwrap();
        assert_ne!(ens.members[0].net.params(), ens.members[1].net.params());
        assert!(CriticEnsemble::new(0, 3, &[8], 0.005, &mut stream(0, "m")).is_err());
    }

    #[test]
    fn terminal_mask_in_targets() {
        let ens = CriticEnsemble::new(1, 2, &[4], 0.005, &mut stream(1, "m")).unwrap();
        let next = array![[1.0, 0.0], [0.0, 1.0]];
        let y = monolithic_targets(&ens, &[-1.0, -1.0], &[true, false], next.view(), 0.9).unwrap();
        assert_eq!(y[0], -1.0);
        let q = ens.predict_target(next.view()).unwrap();
        assert_eq!(y[1], -1.0 + 0.9 * q[1]);
    }
}
