//! Finite-difference checks of every analytic gradient path.

use floq::critic::{
    floq_loss, flow_matching_loss, monolithic_td_loss, CriticEnsemble, FieldLayout, NoiseInterval,
    ValueRange, VelocityField,
};
use floq::encodings::{
    FourierTimeEmbedding, HlGauss, InterpolantEncoding, SigmaSpec, TimeEncoding,
};
use floq::harness::ExperimentConfig;
use floq::nn::{Activation, Mlp};
use floq::policy::{
    bc_flow_loss_with, distill_loss, one_step_policy_loss_with, ActionBox, ActionCritic,
    BcFlowPolicy, DistilledCritic, OneStepPolicy,
};
use floq::rng::stream;
use ndarray::{array, Array2};
use rand::Rng;

const H: f64 = 1e-5;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn sq_loss(net: &Mlp, x: &Array2<f64>, w: &Array2<f64>) -> f64 {
    let out = net.forward_batch(x.view()).unwrap();
    (&out * &out * w).sum() * 0.5
}

#[test]
fn mlp_parameter_and_input_gradients() {
    let mut rng = stream(0, "grad/mlp");
    let mut net = Mlp::new(&[3, 7, 5, 2], Activation::Gelu, &mut rng).unwrap();
    let x = Array2::from_shape_fn((4, 3), |_| rng.random_range(-2.0..2.0));
    let w = Array2::from_shape_fn((4, 2), |_| rng.random_range(0.5..1.5));
    let tape = net.forward_train(x.view()).unwrap();
    let g = net.backward(&tape, (tape.output() * &w).view()).unwrap();
    for i in 0..net.num_params() {
        let orig = net.params()[i];
        net.params_mut()[i] = orig + H;
        let up = sq_loss(&net, &x, &w);
        net.params_mut()[i] = orig - H;
        let down = sq_loss(&net, &x, &w);
        net.params_mut()[i] = orig;
        let fd = (up - down) / (2.0 * H);
        assert!(
            rel_err(fd, g.params[i]) < 1e-6,
            "param {i}: fd {fd} vs {}",
            g.params[i]
        );
    }
    for r in 0..4 {
        for c in 0..3 {
            let mut xp = x.clone();
            xp[[r, c]] += H;
            let mut xm = x.clone();
            xm[[r, c]] -= H;
            let fd = (sq_loss(&net, &xp, &w) - sq_loss(&net, &xm, &w)) / (2.0 * H);
            assert!(rel_err(fd, g.input[[r, c]]) < 1e-6);
        }
    }
}

#[test]
fn flow_matching_loss_gradient() {
    let mut rng = stream(1, "grad/flow");
    let layout = FieldLayout {
        state_dim: 2,
        action_dim: 1,
        interpolant: InterpolantEncoding::HlGauss(
            HlGauss::for_value_range(17, -10.0, 0.0, SigmaSpec::default()).unwrap(),
        ),
        time: TimeEncoding::Fourier(FourierTimeEmbedding::new(8).unwrap()),
    };
    let mut field = VelocityField::new(layout, &[16, 16], 0.005, &mut rng).unwrap();
    let cond = array![[0.3, -0.2, 0.5], [1.0, 0.0, -1.0], [0.0, 0.7, 0.1]];
    let y = [-3.0, -6.5, -1.0];
    let z0 = [-0.5, -0.1, -0.9];
    let t = [0.1, 0.6, 0.95];
    let g = flow_matching_loss(&field, cond.view(), &y, &z0, &t).unwrap();
    for i in 0..field.online_net().num_params() {
        let orig = field.online_net().params()[i];
        field.online_net_mut().params_mut()[i] = orig + H;
        let up = flow_matching_loss(&field, cond.view(), &y, &z0, &t)
            .unwrap()
            .loss;
        field.online_net_mut().params_mut()[i] = orig - H;
        let down = flow_matching_loss(&field, cond.view(), &y, &z0, &t)
            .unwrap()
            .loss;
        field.online_net_mut().params_mut()[i] = orig;
        let fd = (up - down) / (2.0 * H);
        assert!(
            rel_err(fd, g.grads[i]) < 1e-5,
            "param {i}: fd {fd} vs {}",
            g.grads[i]
        );
    }
}

/// Central differences of `loss` over every parameter of `net`.
fn check_params(net: &mut Mlp, analytic: &[f64], tol: f64, mut loss: impl FnMut(&Mlp) -> f64) {
    assert_eq!(analytic.len(), net.num_params());
    for i in 0..net.num_params() {
        let orig = net.params()[i];
        net.params_mut()[i] = orig + H;
        let up = loss(net);
        net.params_mut()[i] = orig - H;
        let down = loss(net);
        net.params_mut()[i] = orig;
        let fd = (up - down) / (2.0 * H);
        assert!(
            rel_err(fd, analytic[i]) < tol,
            "param {i}: fd {fd} vs {}",
            analytic[i]
        );
    }
}

fn random(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn small_layout() -> FieldLayout {
    FieldLayout {
        state_dim: 2,
        action_dim: 1,
        interpolant: InterpolantEncoding::HlGauss(
            HlGauss::for_value_range(9, -10.0, 0.0, SigmaSpec::default()).unwrap(),
        ),
        time: TimeEncoding::Fourier(FourierTimeEmbedding::new(4).unwrap()),
    }
}

#[test]
fn floq_loss_gradient_with_its_own_draws() {
    let mut rng = stream(2, "grad/floq");
    let mut field = VelocityField::new(small_layout(), &[8, 8], 0.005, &mut rng).unwrap();
    let cfg = ExperimentConfig::default()
        .flow_config(ValueRange::new(-10.0, 0.0).unwrap(), 0.99)
        .unwrap();
    let cond = random(&mut rng, 5, 3);
    let y = [-2.0, -7.0, -0.5, -9.0, -4.0];
    let draws = stream(2, "grad/floq/draws");
    let g = floq_loss(&field, cond.view(), &y, &cfg, &mut draws.clone()).unwrap();
    let mut net = field.online_net().clone();
    check_params(&mut net, &g.grads, 1e-5, |net| {
        *field.online_net_mut() = net.clone();
        floq_loss(&field, cond.view(), &y, &cfg, &mut draws.clone())
            .unwrap()
            .loss
    });
}

#[test]
fn monolithic_td_gradient_per_member() {
    let mut rng = stream(3, "grad/td");
    let mut ensemble = CriticEnsemble::new(2, 3, &[6, 6], 0.005, &mut rng).unwrap();
    let cond = random(&mut rng, 4, 3);
    let y = [0.5, -1.0, 2.0, 0.0];
    let (_, grads) = monolithic_td_loss(&ensemble, cond.view(), &y).unwrap();
    for m in 0..2 {
        let mut net = ensemble.members[m].net.clone();
        check_params(&mut net, &grads[m].grads, 1e-6, |net| {
            ensemble.members[m].net = net.clone();
            monolithic_td_loss(&ensemble, cond.view(), &y).unwrap().1[m].loss
        });
    }
}

#[test]
fn distill_loss_gradient() {
    let mut rng = stream(4, "grad/distill");
    let field = VelocityField::new(small_layout(), &[8], 0.005, &mut rng).unwrap();
    let mut distill = DistilledCritic::new(3, &[6, 6], &mut rng).unwrap();
    let noise = NoiseInterval {
        lower: -1.0,
        upper: 0.0,
    };
    let cond = random(&mut rng, 4, 3);
    let draws = stream(4, "grad/distill/draws");
    let g = distill_loss(
        &distill,
        &field.online(),
        cond.view(),
        noise,
        3,
        2,
        &mut draws.clone(),
    )
    .unwrap();
    let mut net = distill.net().clone();
    check_params(&mut net, &g.grads, 1e-6, |net| {
        *distill.net_mut() = net.clone();
        distill_loss(
            &distill,
            &field.online(),
            cond.view(),
            noise,
            3,
            2,
            &mut draws.clone(),
        )
        .unwrap()
        .loss
    });
}

fn small_bc(rng: &mut impl Rng) -> BcFlowPolicy {
    let time = TimeEncoding::Fourier(FourierTimeEmbedding::new(4).unwrap());
    let bounds = ActionBox::new(-1.0, 1.0).unwrap();
    BcFlowPolicy::new(2, 2, &[6, 6], time, 3, bounds, rng).unwrap()
}

#[test]
fn bc_flow_loss_gradient() {
    let mut rng = stream(5, "grad/bc");
    let mut policy = small_bc(&mut rng);
    let states = random(&mut rng, 4, 2);
    let actions = random(&mut rng, 4, 2);
    let x0 = random(&mut rng, 4, 2);
    let t = [0.0, 0.3, 0.7, 0.99];
    let g = bc_flow_loss_with(&policy, states.view(), actions.view(), x0.view(), &t).unwrap();
    let mut net = policy.net.clone();
    check_params(&mut net, &g.grads, 1e-6, |net| {
        policy.net = net.clone();
        bc_flow_loss_with(&policy, states.view(), actions.view(), x0.view(), &t)
            .unwrap()
            .loss
    });
}

#[test]
fn one_step_policy_gradient_through_critic() {
    let mut rng = stream(6, "grad/actor");
    let bc = small_bc(&mut rng);
    let critic = DistilledCritic::new(4, &[6, 6], &mut rng).unwrap();
    let bounds = ActionBox::new(-1.0, 1.0).unwrap();
    let mut policy = OneStepPolicy::new(2, 2, &[6, 6], bounds, &mut rng).unwrap();
    let states = random(&mut rng, 4, 2);
    let x = random(&mut rng, 4, 2);
    let g = one_step_policy_loss_with(&policy, &bc, &critic, states.view(), x.view(), 0.7).unwrap();
    let mut net = policy.net.clone();
    check_params(&mut net, &g.grads, 1e-6, |net| {
        policy.net = net.clone();
        one_step_policy_loss_with(&policy, &bc, &critic, states.view(), x.view(), 0.7)
            .unwrap()
            .loss
    });
}

#[test]
fn critic_action_gradient() {
    let mut rng = stream(7, "grad/dqda");
    let critic = DistilledCritic::new(4, &[6, 6], &mut rng).unwrap();
    let states = random(&mut rng, 3, 2);
    let actions = random(&mut rng, 3, 2);
    let (_, g) = critic
        .value_and_action_grad(states.view(), actions.view())
        .unwrap();
    for r in 0..3 {
        for c in 0..2 {
            let mut up = actions.clone();
            up[[r, c]] += H;
            let mut down = actions.clone();
            down[[r, c]] -= H;
            let qu = critic
                .value_and_action_grad(states.view(), up.view())
                .unwrap()
                .0;
            let qd = critic
                .value_and_action_grad(states.view(), down.view())
                .unwrap()
                .0;
            let fd = (qu[r] - qd[r]) / (2.0 * H);
            assert!(rel_err(fd, g[[r, c]]) < 1e-6);
        }
    }
}
