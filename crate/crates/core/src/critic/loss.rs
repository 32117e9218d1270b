use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::{
    integrate, repeat_rows, FlowCriticConfig, FlowLossKind, NoiseInterval, Velocity, VelocityField,
};
use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGrad {
    pub loss: f64,
    /// Gradient w.r.t. the trained network's flat parameters.
    pub grads: Vec<f64>,
}

/// `n` draws from `U[lower, upper]`; a zero-width interval yields `lower` exactly.
pub fn draw_noise(rng: &mut impl Rng, noise: NoiseInterval, n: usize) -> Vec<f64> {
    let width = noise.width();
    (0..n)
        .map(|_| {
            if width == 0.0 {
                noise.lower
            } else {
                noise.lower + width * rng.random::<f64>()
            }
        })
        .collect()
}

/// Bootstrapped targets `y = r + gamma * mean_j psi(1, z'_j | s', a')` using the
/// given target fields (two fields = clipped double Q: the smaller mean wins).
///
/// `next_cond` holds `[s', a']` rows. All `n * m` noise values are drawn before any
/// integration, row-major, so results do not depend on evaluation order. Terminal
/// rows return `r` exactly.
pub fn bootstrap_targets(
    targets: &[&dyn Velocity],
    rewards: &[f64],
    terminals: &[bool],
    next_cond: ArrayView2<f64>,
    cfg: &FlowCriticConfig,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let n = rewards.len();
    if terminals.len() != n || next_cond.nrows() != n {
        return Err(Error::dims(
            "bootstrap batch",
            n,
            next_cond.nrows().min(terminals.len()),
        ));
    }
    if targets.is_empty() {
        return Err(Error::InvalidParameter(
            "bootstrap needs at least one target field".into(),
        ));
    }
    let m = cfg.target_samples;
    let draws = draw_noise(rng, cfg.noise, n * m);

    let live: Vec<usize> = (0..n).filter(|&i| !terminals[i]).collect();
    let mut y: Vec<f64> = rewards.to_vec();
    if live.is_empty() {
        return Ok(y);
    }
    let mut cond = Array2::zeros((live.len(), next_cond.ncols()));
    let mut z0 = Vec::with_capacity(live.len() * m);
    for (row, &i) in live.iter().enumerate() {
        cond.row_mut(row).assign(&next_cond.row(i));
        z0.extend_from_slice(&draws[i * m..(i + 1) * m]);
    }
    let rep = repeat_rows(cond.view(), m);

    let mut bootstrap = vec![f64::INFINITY; live.len()];
    for field in targets {
        let finals = integrate(*field, rep.view(), &z0, cfg.integration_steps())?.final_values();
        for (slot, chunk) in bootstrap.iter_mut().zip(finals.chunks(m)) {
            let mean = chunk.iter().sum::<f64>() / m as f64;
            *slot = slot.min(mean);
        }
    }
    for (&i, b) in live.iter().zip(bootstrap) {
        y[i] = rewards[i] + cfg.gamma * b;
    }
    ensure_finite(&y, || "bootstrap targets".to_string())?;
    Ok(y)
}

fn interpolants(y: &[f64], z0: &[f64], t: &[f64]) -> Vec<f64> {
    y.iter()
        .zip(z0)
        .zip(t)
        .map(|((&y, &z), &t)| (1.0 - t) * z + t * y)
        .collect()
}

fn check_lengths(n: usize, y: &[f64], z0: &[f64], t: &[f64]) -> Result<()> {
    for (name, len) in [
        ("targets", y.len()),
        ("initial noise", z0.len()),
        ("times", t.len()),
    ] {
        if len != n {
            return Err(Error::dims(format!("flow-matching {name}"), n, len));
        }
    }
    Ok(())
}

/// Value of `mean_i (v(t_i, z_i(t_i)) - (y_i - z0_i))^2` for an arbitrary field.
pub fn flow_matching_loss_value(
    field: &dyn Velocity,
    cond: ArrayView2<f64>,
    y: &[f64],
    z0: &[f64],
    t: &[f64],
) -> Result<f64> {
    check_lengths(cond.nrows(), y, z0, t)?;
    let zt = interpolants(y, z0, t);
    let v = field.velocity(cond, t, &zt)?;
    let n = y.len() as f64;
    let loss = v
        .iter()
        .zip(y.iter().zip(z0))
        .map(|(v, (y, z))| (v - (y - z)).powi(2))
        .sum::<f64>()
        / n;
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite("flow-matching loss".into()))
    }
}

/// Linear flow-matching loss of the online field against constant targets `y`
/// with explicit draws `z0`, `t`; gradients w.r.t. the online parameters.
pub fn flow_matching_loss(
    field: &VelocityField,
    cond: ArrayView2<f64>,
    y: &[f64],
    z0: &[f64],
    t: &[f64],
) -> Result<LossAndGrad> {
    let n = cond.nrows();
    check_lengths(n, y, z0, t)?;
    if n == 0 {
        return Err(Error::InvalidParameter(
            "flow-matching loss on an empty batch".into(),
        ));
    }
    let zt = interpolants(y, z0, t);
    let inputs = field.layout().build_inputs(cond, t, &zt)?;
    let net = field.online_net();
    let tape = net.forward_train(inputs.view())?;
    let pred = tape.output();
    let mut out_grad = Array2::zeros((n, 1));
    let mut loss = 0.0;
    for i in 0..n {
        let r = pred[[i, 0]] - (y[i] - z0[i]);
        loss += r * r;
        out_grad[[i, 0]] = 2.0 * r / n as f64;
    }
    loss /= n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("flow-matching loss".into()));
    }
    let grads = net.backward(&tape, out_grad.view())?;
    Ok(LossAndGrad {
        loss,
        grads: grads.params,
    })
}

/// Flow-matching TD loss with one `(z0, t)` draw per row:
/// `z0 ~ U[l, u]`, `t ~ U[0, 1]` (all `z0` drawn before all `t`).
pub fn floq_loss(
    field: &VelocityField,
    cond: ArrayView2<f64>,
    y: &[f64],
    cfg: &FlowCriticConfig,
    rng: &mut impl Rng,
) -> Result<LossAndGrad> {
    let n = cond.nrows();
    let z0 = draw_noise(rng, cfg.noise, n);
    let t: Vec<f64> = match cfg.loss {
        FlowLossKind::Full => (0..n).map(|_| rng.random::<f64>()).collect(),
        FlowLossKind::T0Only => vec![0.0; n],
    };
    flow_matching_loss(field, cond, y, &z0, &t)
}

/// Same as [`floq_loss`] with the time distribution collapsed to `t = 0`.
pub fn t0_only_loss(
    field: &VelocityField,
    cond: ArrayView2<f64>,
    y: &[f64],
    cfg: &FlowCriticConfig,
    rng: &mut impl Rng,
) -> Result<LossAndGrad> {
    let cfg = FlowCriticConfig {
        loss: FlowLossKind::T0Only,
        ..cfg.clone()
    };
    floq_loss(field, cond, y, &cfg, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critic::{ConstantField, FieldLayout, FnField, ValueRange};
    use crate::encodings::{InterpolantEncoding, TimeEncoding};
    use crate::nn::{Activation, Adam, Mlp};
    use crate::rng::stream;
    use approx::assert_relative_eq;
    use ndarray::{array, ArrayView1};

    fn config() -> FlowCriticConfig {
        let range = ValueRange::new(-10.0, 0.0).unwrap();
        FlowCriticConfig::with_defaults(range, 0.9).unwrap()
    }

    #[test]
    fn terminal_targets_are_exact_rewards() {
        let cfg = config();
        let next = array![[0.0, 1.0], [1.0, 0.0]];
        let wild = ConstantField(1e6);
        let y = bootstrap_targets(
            &[&wild],
            &[-1.0, 0.3],
            &[true, true],
            next.view(),
            &cfg,
            &mut stream(0, "b"),
        )
        .unwrap();
        assert_eq!(y, vec![-1.0, 0.3]);
    }

    #[test]
    fn constant_target_value() {
        // A field that drives every z(0) to exactly -3 at t = 1 under Euler with K steps:
        // v = (-3 - z0) constant along the straight path, realized as (-3 - z)/(1 - t).
        let cfg = config();
        let field = FnField(|t: f64, z: f64, _c: ArrayView1<f64>| (-3.0 - z) / (1.0 - t));
        let next = array![[0.0, 1.0]];
        let y = bootstrap_targets(
            &[&field],
            &[0.5],
            &[false],
            next.view(),
            &cfg,
            &mut stream(0, "b"),
        )
        .unwrap();
        assert_relative_eq!(y[0], 0.5 + 0.9 * -3.0, epsilon = 1e-12);
    }

    #[test]
    fn clipped_double_takes_minimum() {
        let cfg = config();
        let next = array![[0.0, 1.0]];
        let a = ConstantField(1.0);
        let b = ConstantField(-2.0);
        let mut rng = stream(5, "b");
        let y =
            bootstrap_targets(&[&a, &b], &[0.0], &[false], next.view(), &cfg, &mut rng).unwrap();
        let draws = draw_noise(&mut stream(5, "b"), cfg.noise, 8);
        let mean = draws.iter().sum::<f64>() / 8.0;
        assert_relative_eq!(y[0], 0.9 * (mean - 2.0), epsilon = 1e-12);
    }

    #[test]
    fn exact_displacement_field_has_zero_loss() {
        let y = [2.0, -1.0, 0.5];
        let z0 = [1.0, -4.0, -0.2];
        let t = [0.0, 0.3, 0.9];
        let ys = y;
        let field = FnField(move |t: f64, z: f64, c: ArrayView1<f64>| {
            let y = ys[c[0] as usize];
            (y - z) / (1.0 - t)
        });
        let cond = array![[0.0], [1.0], [2.0]];
        let loss = flow_matching_loss_value(&field, cond.view(), &y, &z0, &t).unwrap();
        assert!(loss < 1e-28, "{loss}");
        let zero = ConstantField(0.0);
        let one =
            flow_matching_loss_value(&zero, array![[0.0]].view(), &[2.0], &[1.0], &[0.37]).unwrap();
        assert_eq!(one, 1.0);
    }

    fn scalar_layout() -> FieldLayout {
        FieldLayout {
            state_dim: 1,
            action_dim: 0,
            interpolant: InterpolantEncoding::Scalar,
            time: TimeEncoding::Scalar,
        }
    }

    #[test]
    fn zero_network_loss_is_squared_displacement() {
        let net = Mlp::zeros(&[3, 4, 1], Activation::Gelu).unwrap();
        let field = VelocityField::from_parts(scalar_layout(), net.clone(), net, 0.005).unwrap();
        let out = flow_matching_loss(&field, array![[0.0]].view(), &[2.0], &[1.0], &[0.6]).unwrap();
        assert_eq!(out.loss, 1.0);
    }

    #[test]
    fn t0_exact_fit_with_linear_network() {
        // inputs [s, z, t]; v = y - z with y = 2 => weights (0, -1, 0), bias 2
        let net =
            Mlp::from_params(&[3, 1], Activation::Identity, vec![0.0, -1.0, 0.0, 2.0]).unwrap();
        let field = VelocityField::from_parts(scalar_layout(), net.clone(), net, 0.005).unwrap();
        let mut cfg = config();
        cfg.noise = NoiseInterval {
            lower: -5.0,
            upper: 0.0,
        };
        let cond = array![[0.0], [1.0], [0.5]];
        let out = t0_only_loss(&field, cond.view(), &[2.0; 3], &cfg, &mut stream(0, "l")).unwrap();
        assert!(out.loss < 1e-28);
        assert!(out.grads.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn t0_only_matches_floq_loss_with_collapsed_time() {
        let mut rng = stream(3, "l");
        let layout = FieldLayout {
            state_dim: 2,
            action_dim: 1,
            ..scalar_layout()
        };
        let field = VelocityField::new(layout, &[8], 0.005, &mut rng).unwrap();
        let cfg = config();
        let cond = array![[0.1, 0.2, 0.3], [0.4, -0.5, 0.6]];
        let y = [-1.0, -2.0];
        let a = t0_only_loss(&field, cond.view(), &y, &cfg, &mut stream(9, "x")).unwrap();
        let z0 = draw_noise(&mut stream(9, "x"), cfg.noise, 2);
        let b = flow_matching_loss(&field, cond.view(), &y, &z0, &[0.0, 0.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fitted_flow_reaches_constant_target() {
        // Fixed-target regression: y constant per state, no bootstrapping.
        let mut rng = stream(11, "fit");
        let layout = FieldLayout {
            state_dim: 2,
            action_dim: 0,
            interpolant: InterpolantEncoding::HlGauss(
                crate::encodings::HlGauss::for_value_range(
                    33,
                    -10.0,
                    0.0,
                    crate::encodings::SigmaSpec::Absolute(0.5),
                )
                .unwrap(),
            ),
            time: TimeEncoding::Fourier(crate::encodings::FourierTimeEmbedding::new(16).unwrap()),
        };
        let mut field = VelocityField::new(layout, &[64, 64, 64], 0.005, &mut rng).unwrap();
        let mut cfg = config();
        cfg.noise = NoiseInterval {
            lower: -1.0,
            upper: 0.0,
        };
        let cond = array![[1.0, 0.0], [0.0, 1.0]];
        let y = [-4.0, -7.0];
        let mut adam = Adam::new(field.online_net().num_params(), 3e-3);
        let (cond_b, y_b) = (
            repeat_rows(cond.view(), 256),
            [[-4.0; 256], [-7.0; 256]].concat(),
        );
        for _ in 0..2000 {
            let g = floq_loss(&field, cond_b.view(), &y_b, &cfg, &mut rng).unwrap();
            adam.step(field.online_net_mut().params_mut(), &g.grads)
                .unwrap();
        }
        for k in [1, 4, 8] {
            let q = super::super::q_value(&field.online(), cond.view(), cfg.noise, k, 16, &mut rng)
                .unwrap();
            for (q, y) in q.iter().zip(y) {
                assert!((q - y).abs() < 0.01 * y.abs(), "K={k}: {q} vs {y}");
            }
        }
    }
}
