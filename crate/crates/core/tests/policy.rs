use floq::encodings::{FourierTimeEmbedding, TimeEncoding};
use floq::nn::Adam;
use floq::policy::{
    bc_flow_loss, one_step_policy_loss, one_step_policy_loss_with, standard_normal, ActionBox,
    ActionCritic, BcFlowPolicy, DistilledCritic, OneStepPolicy,
};
use floq::rng::stream;
use floq::Result;
use ndarray::{Array2, ArrayView2};
use rand::Rng;

fn bounds() -> ActionBox {
    ActionBox::new(-1.0, 1.0).unwrap()
}

fn states(rng: &mut impl Rng, n: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, 1), || rng.random_range(-1.0..1.0))
}

fn behavior(s: f64) -> f64 {
    0.6 * (2.0 * s).sin()
}

fn bc_policy(seed: u64) -> BcFlowPolicy {
    let time = TimeEncoding::Fourier(FourierTimeEmbedding::new(16).unwrap());
    BcFlowPolicy::new(
        1,
        1,
        &[64, 64],
        time,
        10,
        bounds(),
        &mut stream(seed, "bc-init"),
    )
    .unwrap()
}

#[test]
fn bc_flow_reproduces_deterministic_behavior() {
    let mut policy = bc_policy(0);
    let mut opt = Adam::new(policy.net.num_params(), 3e-3);
    let mut rng = stream(0, "bc-train");
    for _ in 0..1500 {
        let s = states(&mut rng, 256);
        let a = s.mapv(behavior);
        let g = bc_flow_loss(&policy, s.view(), a.view(), &mut rng).unwrap();
        opt.step(policy.net.params_mut(), &g.grads).unwrap();
    }
    // Held-out states from a different stream.
    let mut eval = stream(1, "bc-eval");
    let s = states(&mut eval, 200);
    let a = policy.sample(s.view(), &mut eval).unwrap();
    let worst = s
        .iter()
        .zip(a.iter())
        .map(|(s, a)| (a - behavior(*s)).abs())
        .fold(0.0, f64::max);
    assert!(worst < 0.05 * bounds().width(), "worst error {worst}");
}

struct Quadratic;

impl ActionCritic for Quadratic {
    fn value_and_action_grad(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<(Vec<f64>, Array2<f64>)> {
        let target = states.mapv(|s| 0.5 * s);
        let diff = &actions - &target;
        Ok((
            diff.iter().map(|d| -d * d).collect(),
            diff.mapv(|d| -2.0 * d),
        ))
    }
}

#[test]
fn zero_alpha_climbs_to_the_critic_maximizer() {
    let bc = bc_policy(1);
    let mut policy = OneStepPolicy::new(1, 1, &[32, 32], bounds(), &mut stream(2, "mu")).unwrap();
    let mut opt = Adam::new(policy.net.num_params(), 3e-3);
    let mut rng = stream(2, "train");
    for _ in 0..1500 {
        let s = states(&mut rng, 128);
        let g = one_step_policy_loss(&policy, &bc, &Quadratic, s.view(), 0.0, &mut rng).unwrap();
        opt.step(policy.net.params_mut(), &g.grads).unwrap();
    }
    let mut eval = stream(3, "probe");
    let s = states(&mut eval, 100);
    let x = standard_normal(&mut eval, 100, 1);
    let a = policy.actions(s.view(), x.view()).unwrap();
    let worst = s
        .iter()
        .zip(a.iter())
        .map(|(s, a)| (a - 0.5 * s).abs())
        .fold(0.0, f64::max);
    assert!(worst < 0.02, "worst {worst}");
}

#[test]
fn large_alpha_recovers_the_bc_policy() {
    let bc = bc_policy(4);
    let critic = DistilledCritic::new(2, &[16], &mut stream(4, "critic")).unwrap();
    let mut policy = OneStepPolicy::new(1, 1, &[64, 64], bounds(), &mut stream(4, "mu")).unwrap();
    let mut opt = Adam::new(policy.net.num_params(), 3e-3);
    let mut rng = stream(4, "train");
    for _ in 0..2000 {
        let s = states(&mut rng, 128);
        let g = one_step_policy_loss(&policy, &bc, &critic, s.view(), 1e4, &mut rng).unwrap();
        opt.step(policy.net.params_mut(), &g.grads).unwrap();
    }
    let mut eval = stream(5, "probe");
    let s = states(&mut eval, 100);
    let x = standard_normal(&mut eval, 100, 1);
    let a = policy.actions(s.view(), x.view()).unwrap();
    let target = bc.flow_actions(s.view(), x.view()).unwrap();
    let worst = (&a - &target).iter().fold(0.0f64, |m, d| m.max(d.abs()));
    assert!(worst < 0.02 * bounds().width(), "worst {worst}");
}

#[test]
fn policy_and_bc_target_share_the_noise_draw() {
    let bc = bc_policy(6);
    let critic = DistilledCritic::new(2, &[8], &mut stream(6, "critic")).unwrap();
    let policy = OneStepPolicy::new(1, 1, &[8], bounds(), &mut stream(6, "mu")).unwrap();
    let s = states(&mut stream(6, "s"), 16);
    let rng = stream(6, "noise");
    let x = standard_normal(&mut rng.clone(), 16, 1);
    let drawn =
        one_step_policy_loss(&policy, &bc, &critic, s.view(), 2.0, &mut rng.clone()).unwrap();
    let explicit =
        one_step_policy_loss_with(&policy, &bc, &critic, s.view(), x.view(), 2.0).unwrap();
    assert_eq!(drawn, explicit);
}

#[test]
fn sampled_actions_stay_in_the_box() {
    let bc = bc_policy(7);
    let policy = OneStepPolicy::new(1, 1, &[8], bounds(), &mut stream(7, "mu")).unwrap();
    let mut rng = stream(7, "s");
    let s = states(&mut rng, 500).mapv(|v| 50.0 * v);
    for a in [
        bc.sample(s.view(), &mut rng).unwrap(),
        policy.sample(s.view(), &mut rng).unwrap(),
    ] {
        assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
