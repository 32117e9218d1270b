use floq::envs::{ContinuousEnv, TabularMdp};
use floq::oracles::{
    mc_policy_eval, mc_tabular_q, policy_q_eval, value_iteration, DEFAULT_TOLERANCE,
};
use floq::rng::stream;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn random_policy_matches_monte_carlo() {
    let mdp = TabularMdp::gridworld(5, 5, 0.1, 0.99).unwrap();
    let uniform = vec![vec![0.25; 4]; mdp.num_states()];
    let q = policy_q_eval(&mdp, &uniform, DEFAULT_TOLERANCE).unwrap();
    let mut rng = stream(7, "mc");
    for (s, a) in [(0, 1), (12, 3), (23, 1)] {
        let est = mc_tabular_q(&mdp, &uniform, s, a, 100_000, 5_000, &mut rng).unwrap();
        let z = (est.mean - q.get(s, a)).abs() / est.std_err;
        assert!(
            z < 3.0,
            "({s},{a}): mc {} +- {} vs {}",
            est.mean,
            est.std_err,
            q.get(s, a)
        );
    }
}

fn permuted(mdp: &TabularMdp, perm: &[usize]) -> TabularMdp {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut p = vec![0.0; ns * na * ns];
    let mut r = vec![0.0; ns * na * ns];
    let mut terminal = vec![false; ns];
    let mut init = vec![0.0; ns];
    for s in 0..ns {
        terminal[perm[s]] = mdp.is_terminal(s);
        init[perm[s]] = mdp.initial()[s];
        for a in 0..na {
            for n in 0..ns {
                let i = (perm[s] * na + a) * ns + perm[n];
                p[i] = mdp.transition(s, a)[n];
                r[i] = mdp.reward(s, a, n);
            }
        }
    }
    TabularMdp::new(ns, na, p, r, terminal, init, mdp.gamma(), mdp.horizon()).unwrap()
}

fn random_mdp(seed: u64, ns: usize, na: usize) -> TabularMdp {
    let mut rng = stream(seed, "random-mdp");
    let mut p = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        let row: Vec<f64> = (0..ns).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = row.iter().sum();
        p.extend(row.iter().map(|x| x / total));
    }
    // Exact row sums: put the rounding residue on the last entry.
    for row in p.chunks_mut(ns) {
        let head: f64 = row[..ns - 1].iter().sum();
        row[ns - 1] = 1.0 - head;
    }
    let r: Vec<f64> = (0..ns * na * ns)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    TabularMdp::new(
        ns,
        na,
        p,
        r,
        vec![false; ns],
        vec![1.0 / ns as f64; ns],
        0.9,
        100,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn value_iteration_commutes_with_relabeling(seed in 0u64..1000, ns in 2usize..7, na in 1usize..4, rot in 1usize..6) {
        let mdp = random_mdp(seed, ns, na);
        let perm: Vec<usize> = (0..ns).map(|s| (s * 5 + rot) % ns).collect();
        let mut seen = perm.clone();
        seen.sort();
        prop_assume!(seen == (0..ns).collect::<Vec<_>>());
        let q = value_iteration(&mdp, DEFAULT_TOLERANCE).unwrap();
        let qp = value_iteration(&permuted(&mdp, &perm), DEFAULT_TOLERANCE).unwrap();
        for s in 0..ns {
            for a in 0..na {
                prop_assert!((q.get(s, a) - qp.get(perm[s], a)).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn open_maze_expert_follows_geometric_series() {
    let gamma = 0.99;
    let env = ContinuousEnv::open_maze(0.0, gamma).unwrap();
    // Five unit steps right from the start; the last one lands in the goal.
    let probes = vec![(env.start.clone(), vec![1.0, 0.0])];
    let expert = env.clone();
    let mut policy = |s: &[f64], _: &mut floq::rng::StreamRng| expert.expert_action(s);
    let est = mc_policy_eval(&env, &mut policy, &probes, 5, &mut stream(0, "maze")).unwrap();
    let closed = -(1.0 - gamma.powi(4)) / (1.0 - gamma);
    assert!(
        (est[0].mean - closed).abs() < 1e-12,
        "{} vs {closed}",
        est[0].mean
    );
    assert_eq!(est[0].std_err, 0.0);
}

#[test]
fn wall_maze_expert_matches_shortest_path() {
    let gamma = 0.95;
    let env = ContinuousEnv::point_maze(0.0, gamma).unwrap();
    let mut pos = env.start.clone();
    let mut steps = 0;
    let mut rng = stream(0, "walk");
    while !env.in_goal(&pos) {
        pos = env
            .step(&pos, &env.expert_action(&pos), &mut rng)
            .unwrap()
            .0;
        steps += 1;
    }
    let first = env.expert_action(&env.start);
    let expert = env.clone();
    let mut policy = |s: &[f64], _: &mut floq::rng::StreamRng| expert.expert_action(s);
    let est = mc_policy_eval(
        &env,
        &mut policy,
        &[(env.start.clone(), first)],
        3,
        &mut rng,
    )
    .unwrap();
    let closed = -(1.0 - gamma.powi(steps - 1)) / (1.0 - gamma);
    assert!((est[0].mean - closed).abs() < 1e-12);
}

#[test]
fn zero_reward_rollouts_are_zero() {
    // The goal state pays 0 on every step that stays inside it.
    let env = ContinuousEnv::bandit_chain(0.9).unwrap();
    let probes = vec![(env.goal.clone(), vec![0.0])];
    let mut policy = |_: &[f64], _: &mut floq::rng::StreamRng| vec![0.0];
    let est = mc_policy_eval(&env, &mut policy, &probes, 4, &mut stream(1, "z")).unwrap();
    assert_eq!(est[0].mean, 0.0);
    assert_eq!(est[0].std_err, 0.0);
}
