use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite MDP with dense transition and reward tensors indexed `[s][a][s']`.
///
/// Rewards are stored per transition `r(s, a, s')` so "reward on entering the
/// goal" is exact under stochastic dynamics; [`TabularMdp::expected_reward`]
/// gives the `R[s][a]` view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    transitions: Vec<f64>,
    rewards: Vec<f64>,
    terminal: Vec<bool>,
    initial: Vec<f64>,
    gamma: f64,
    horizon: usize,
}

const ROW_TOLERANCE: f64 = 1e-12;

impl TabularMdp {
    /// `transitions` and `rewards` are flat `[S x A x S]` tensors.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        terminal: Vec<bool>,
        initial: Vec<f64>,
        gamma: f64,
        horizon: usize,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidParameter(
                "MDP needs at least one state and one action".into(),
            ));
        }
        let cube = num_states * num_actions * num_states;
        if transitions.len() != cube {
            return Err(Error::dims("transition tensor", cube, transitions.len()));
        }
        if rewards.len() != cube {
            return Err(Error::dims("reward tensor", cube, rewards.len()));
        }
        if terminal.len() != num_states {
            return Err(Error::dims("terminal mask", num_states, terminal.len()));
        }
        if initial.len() != num_states {
            return Err(Error::dims(
                "initial distribution",
                num_states,
                initial.len(),
            ));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in [0, 1), got {gamma}"
            )));
        }
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be positive".into()));
        }
        check_distribution(&initial, "initial distribution")?;
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidParameter("rewards must be finite".into()));
        }
        let mdp = Self {
            num_states,
            num_actions,
            transitions,
            rewards,
            terminal,
            initial,
            gamma,
            horizon,
        };
        for s in 0..num_states {
            for a in 0..num_actions {
                check_distribution(mdp.transition(s, a), &format!("P[{s}][{a}]"))?;
                if mdp.terminal[s] {
                    let stays = (mdp.transition(s, a)[s] - 1.0).abs() <= ROW_TOLERANCE;
                    let silent = mdp.reward_row(s, a).iter().all(|&r| r == 0.0);
                    if !stays || !silent {
                        return Err(Error::InvalidParameter(format!(
                            "terminal state {s} must self-loop with reward 0"
                        )));
                    }
                }
            }
        }
        Ok(mdp)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    fn index(&self, s: usize, a: usize) -> usize {
        (s * self.num_actions + a) * self.num_states
    }

    /// Next-state distribution `P[s][a]`.
    pub fn transition(&self, s: usize, a: usize) -> &[f64] {
        let i = self.index(s, a);
        &self.transitions[i..i + self.num_states]
    }

    /// Rewards `r(s, a, s')` for every `s'`.
    pub fn reward_row(&self, s: usize, a: usize) -> &[f64] {
        let i = self.index(s, a);
        &self.rewards[i..i + self.num_states]
    }

    pub fn reward(&self, s: usize, a: usize, next: usize) -> f64 {
        self.reward_row(s, a)[next]
    }

    pub fn expected_reward(&self, s: usize, a: usize) -> f64 {
        self.transition(s, a)
            .iter()
            .zip(self.reward_row(s, a))
            .map(|(p, r)| p * r)
            .sum()
    }

    /// Smallest and largest reward over transitions with positive probability.
    pub fn reward_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (p, r) in self.transitions.iter().zip(&self.rewards) {
            if *p > 0.0 {
                lo = lo.min(*r);
                hi = hi.max(*r);
            }
        }
        (lo, hi)
    }

    pub fn sample_initial(&self, rng: &mut impl Rng) -> usize {
        sample_index(&self.initial, rng)
    }

    /// Samples `s' ~ P[s][a]`; returns `(s', r(s, a, s'))`.
    pub fn step(&self, s: usize, a: usize, rng: &mut impl Rng) -> (usize, f64) {
        let next = sample_index(self.transition(s, a), rng);
        (next, self.reward(s, a, next))
    }

    /// `n`-state corridor with actions `{0: left, 1: right}`. The last state is
    /// an absorbing goal; entering it pays 1, everything else pays 0. Episodes
    /// start in state 0.
    pub fn chain(n: usize, gamma: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "chain needs at least 2 states, got {n}"
            )));
        }
        let (s_count, a_count) = (n, 2);
        let mut p = vec![0.0; s_count * a_count * s_count];
        let mut r = vec![0.0; p.len()];
        let goal = n - 1;
        for s in 0..n {
            for a in 0..2 {
                let next = if s == goal {
                    goal
                } else if a == 0 {
                    s.saturating_sub(1)
                } else {
                    s + 1
                };
                let i = (s * a_count + a) * s_count + next;
                p[i] = 1.0;
                if s != goal && next == goal {
                    r[i] = 1.0;
                }
            }
        }
        let mut terminal = vec![false; n];
        terminal[goal] = true;
        let mut initial = vec![0.0; n];
        initial[0] = 1.0;
        Self::new(n, 2, p, r, terminal, initial, gamma, 4 * n)
    }

    /// `width x height` grid, state `y * width + x`, actions
    /// `{0: up, 1: right, 2: down, 3: left}`. The intended move happens with
    /// probability `1 - slip`; otherwise one of the other three actions is taken
    /// uniformly. Moves into the border leave the agent in place. The goal is the
    /// corner `(width - 1, height - 1)`; every step pays -1 except entering the
    /// goal, which pays 0. Episodes start uniformly in a non-goal cell.
    pub fn gridworld(width: usize, height: usize, slip: f64, gamma: f64) -> Result<Self> {
        if width * height < 2 {
            return Err(Error::InvalidParameter(
                "gridworld needs at least 2 cells".into(),
            ));
        }
        if !(0.0..=1.0).contains(&slip) {
            return Err(Error::InvalidParameter(format!(
                "slip must lie in [0, 1], got {slip}"
            )));
        }
        let n = width * height;
        let goal = n - 1;
        let mv = |s: usize, a: usize| -> usize {
            let (x, y) = (s % width, s / width);
            let (nx, ny) = match a {
                0 => (x, (y + 1).min(height - 1)),
                1 => ((x + 1).min(width - 1), y),
                2 => (x, y.saturating_sub(1)),
                _ => (x.saturating_sub(1), y),
            };
            ny * width + nx
        };
        let mut p = vec![0.0; n * 4 * n];
        let mut r = vec![0.0; p.len()];
        for s in 0..n {
            for a in 0..4 {
                let base = (s * 4 + a) * n;
                if s == goal {
                    p[base + goal] = 1.0;
                    continue;
                }
                for actual in 0..4 {
                    let prob = if actual == a { 1.0 - slip } else { slip / 3.0 };
                    p[base + mv(s, actual)] += prob;
                }
                for next in 0..n {
                    r[base + next] = if next == goal { 0.0 } else { -1.0 };
                }
            }
        }
        let mut terminal = vec![false; n];
        terminal[goal] = true;
        let mut initial = vec![1.0 / (n - 1) as f64; n];
        initial[goal] = 0.0;
        Self::new(n, 4, p, r, terminal, initial, gamma, 10 * (width + height))
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !(0.0..=1.0 + ROW_TOLERANCE).contains(&x)) {
        return Err(Error::InvalidParameter(format!(
            "{what} has entries outside [0, 1]"
        )));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > ROW_TOLERANCE {
        return Err(Error::InvalidParameter(format!(
            "{what} sums to {total}, not 1"
        )));
    }
    Ok(())
}

/// Inverse-CDF draw from a probability vector.
pub(crate) fn sample_index(p: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi > 0.0 {
            acc += pi;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}
