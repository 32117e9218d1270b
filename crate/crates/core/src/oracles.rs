//! Ground-truth machinery: value iteration, policy evaluation and Monte-Carlo
//! return estimates. Deliberately independent of the network and critic code.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::envs::{ContinuousEnv, TabularMdp};
use crate::error::{Error, FormatErrorKind, Result};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;

/// Action values `Q[s][a]` with the sup-norm Bellman residual of the final sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
    pub residual: f64,
    /// Residual after every sweep.
    pub residual_trace: Vec<f64>,
}

impl QTable {
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    /// Lowest-index maximizing action.
    pub fn greedy(&self, s: usize) -> usize {
        argmax(self.row(s))
    }

    pub fn value(&self, s: usize) -> f64 {
        self.row(s)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Deterministic greedy policy as per-state distributions.
    pub fn greedy_policy(&self) -> Vec<Vec<f64>> {
        (0..self.num_states)
            .map(|s| {
                let mut p = vec![0.0; self.num_actions];
                p[self.greedy(s)] = 1.0;
                p
            })
            .collect()
    }

    /// CSV with header `s,a,q`, values at 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,a,q\n");
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                writeln!(out, "{s},{a},{:.16e}", self.get(s, a)).expect("string write");
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Parses [`QTable::to_csv`] output. The residual is not stored and reads as 0.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some("s,a,q") {
            return Err(Error::format(
                path,
                1,
                FormatErrorKind::BadHeader,
                "expected `s,a,q`",
            ));
        }
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let parsed = match line.split(',').collect::<Vec<_>>()[..] {
                [s, a, q] => s
                    .parse::<usize>()
                    .ok()
                    .zip(a.parse::<usize>().ok())
                    .zip(q.parse::<f64>().ok()),
                _ => None,
            };
            let ((s, a), q) = parsed.ok_or_else(|| {
                Error::format(
                    path,
                    i + 2,
                    FormatErrorKind::BadRecord,
                    format!("bad row `{line}`"),
                )
            })?;
            entries.push((s, a, q));
        }
        let num_states = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
        let num_actions = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
        if entries.len() != num_states * num_actions {
            return Err(Error::format(
                path,
                entries.len() + 1,
                FormatErrorKind::Truncated,
                "incomplete table",
            ));
        }
        let mut values = vec![0.0; entries.len()];
        for (s, a, q) in entries {
            values[s * num_actions + a] = q;
        }
        Ok(Self {
            num_states,
            num_actions,
            values,
            residual: 0.0,
            residual_trace: Vec::new(),
        })
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Repeats `Q <- backup(Q)` from zero until the sup-norm change is below `tol`.
fn iterate(
    mdp: &TabularMdp,
    tol: f64,
    next_value: impl Fn(&[f64], usize) -> f64,
) -> Result<QTable> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let gamma = mdp.gamma();
    let mut q = vec![0.0; ns * na];
    let mut next = vec![0.0; ns * na];
    let mut v = vec![0.0; ns];
    let mut trace = Vec::new();
    loop {
        for (s, vs) in v.iter_mut().enumerate() {
            *vs = next_value(&q[s * na..(s + 1) * na], s);
        }
        let mut residual = 0.0f64;
        for s in 0..ns {
            for a in 0..na {
                let backup: f64 = mdp
                    .transition(s, a)
                    .iter()
                    .zip(mdp.reward_row(s, a))
                    .zip(&v)
                    .filter(|((p, _), _)| **p > 0.0)
                    .map(|((p, r), vn)| p * (r + gamma * vn))
                    .sum();
                let i = s * na + a;
                residual = residual.max((backup - q[i]).abs());
                next[i] = backup;
            }
        }
        std::mem::swap(&mut q, &mut next);
        trace.push(residual);
        if residual < tol {
            return Ok(QTable {
                num_states: ns,
                num_actions: na,
                values: q,
                residual,
                residual_trace: trace,
            });
        }
    }
}

/// Optimal action values by Bellman optimality iteration (no `1/(1-gamma)`
/// normalization).
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<QTable> {
    iterate(mdp, tol, |row, _| {
        row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    })
}

/// Action values of a stochastic policy `policy[s][a]`.
pub fn policy_q_eval(mdp: &TabularMdp, policy: &[Vec<f64>], tol: f64) -> Result<QTable> {
    if policy.len() != mdp.num_states() {
        return Err(Error::dims("policy rows", mdp.num_states(), policy.len()));
    }
    for (s, p) in policy.iter().enumerate() {
        if p.len() != mdp.num_actions() {
            return Err(Error::dims("policy row", mdp.num_actions(), p.len()));
        }
        let total: f64 = p.iter().sum();
        if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "policy row {s} is not a distribution"
            )));
        }
    }
    iterate(mdp, tol, |row, s| {
        row.iter().zip(&policy[s]).map(|(q, p)| q * p).sum()
    })
}

/// Sample mean and standard error of a Monte-Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub episodes: usize,
}

impl McEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std_err = if n > 1 && xs.iter().any(|&x| x != xs[0]) {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std_err,
            episodes: n,
        }
    }
}

fn sample(p: &[f64], rng: &mut impl Rng) -> usize {
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

/// Discounted return of starting in `s` with action `a`, then following
/// `policy`, truncated after `max_steps` or at a terminal state.
pub fn mc_tabular_q(
    mdp: &TabularMdp,
    policy: &[Vec<f64>],
    s: usize,
    a: usize,
    episodes: usize,
    max_steps: usize,
    rng: &mut impl Rng,
) -> Result<McEstimate> {
    if episodes == 0 {
        return Err(Error::InvalidParameter(
            "Monte-Carlo needs at least one episode".into(),
        ));
    }
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let (mut state, mut action) = (s, a);
        let mut total = 0.0;
        let mut discount = 1.0;
        for _ in 0..max_steps {
            if mdp.is_terminal(state) {
                break;
            }
            let next = sample(mdp.transition(state, action), rng);
            total += discount * mdp.reward(state, action, next);
            discount *= mdp.gamma();
            state = next;
            action = sample(&policy[state], rng);
        }
        returns.push(total);
    }
    Ok(McEstimate::from_samples(&returns))
}

/// Monte-Carlo discounted returns for each probe `(state, first action)` pair,
/// following `policy` afterwards until termination or the environment horizon.
pub fn mc_policy_eval<R: Rng>(
    env: &ContinuousEnv,
    policy: &mut dyn FnMut(&[f64], &mut R) -> Vec<f64>,
    probes: &[(Vec<f64>, Vec<f64>)],
    episodes: usize,
    rng: &mut R,
) -> Result<Vec<McEstimate>> {
    if episodes == 0 {
        return Err(Error::InvalidParameter(
            "Monte-Carlo needs at least one episode".into(),
        ));
    }
    let mut out = Vec::with_capacity(probes.len());
    for (s0, a0) in probes {
        let mut returns = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let mut state = s0.clone();
            let mut action = a0.clone();
            let mut total = 0.0;
            let mut discount = 1.0;
            for _ in 0..env.horizon {
                let (next, r, done) = env.step(&state, &action, rng)?;
                total += discount * r;
                discount *= env.gamma;
                if done {
                    break;
                }
                state = next;
                action = policy(&state, rng);
            }
            returns.push(total);
        }
        out.push(McEstimate::from_samples(&returns));
    }
    Ok(out)
}
