use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Env, EnvSpec};
use crate::error::{Error, FormatErrorKind, Result};
use crate::oracles::value_iteration;
use crate::rng::stream;

pub const DATASET_MAGIC: &str = "FLOQDATA1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env: String,
    pub behavior: String,
    pub seed: u64,
    pub gamma: f64,
    pub reward_min: f64,
    pub reward_max: f64,
    pub state_dim: usize,
    pub action_dim: usize,
    pub num_transitions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub meta: DatasetMeta,
    transitions: Vec<Transition>,
}

/// Raw-form minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    pub terminals: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

impl OfflineDataset {
    /// Checks dimensions and reward bounds against `meta`; `num_transitions` is
    /// overwritten with the record count.
    pub fn new(mut meta: DatasetMeta, transitions: Vec<Transition>) -> Result<Self> {
        for (i, t) in transitions.iter().enumerate() {
            check_transition(&meta, t)
                .map_err(|msg| Error::InvalidParameter(format!("transition {i}: {msg}")))?;
        }
        meta.num_transitions = transitions.len();
        Ok(Self { meta, transitions })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Appends a transition, widening the reward bounds if needed.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        let mut meta = self.meta.clone();
        if self.transitions.is_empty() {
            (meta.reward_min, meta.reward_max) = (t.reward, t.reward);
        } else {
            meta.reward_min = meta.reward_min.min(t.reward);
            meta.reward_max = meta.reward_max.max(t.reward);
        }
        check_transition(&meta, &t).map_err(Error::InvalidParameter)?;
        self.meta = meta;
        self.transitions.push(t);
        self.meta.num_transitions = self.transitions.len();
        Ok(())
    }

    /// Uniform sampling with replacement.
    pub fn sample_batch(&self, rng: &mut impl Rng, size: usize) -> Result<Batch> {
        if self.transitions.is_empty() {
            return Err(Error::InvalidParameter(
                "cannot sample from an empty dataset".into(),
            ));
        }
        let idx: Vec<usize> = (0..size).map(|_| rng.random_range(0..self.len())).collect();
        Ok(self.batch_of(&idx))
    }

    pub fn batch_of(&self, idx: &[usize]) -> Batch {
        let (ds, da) = (self.meta.state_dim, self.meta.action_dim);
        let n = idx.len();
        let mut batch = Batch {
            states: Array2::zeros((n, ds)),
            actions: Array2::zeros((n, da)),
            rewards: Vec::with_capacity(n),
            next_states: Array2::zeros((n, ds)),
            terminals: Vec::with_capacity(n),
        };
        for (row, &i) in idx.iter().enumerate() {
            let t = &self.transitions[i];
            for j in 0..ds {
                batch.states[[row, j]] = t.state[j];
                batch.next_states[[row, j]] = t.next_state[j];
            }
            for j in 0..da {
                batch.actions[[row, j]] = t.action[j];
            }
            batch.rewards.push(t.reward);
            batch.terminals.push(t.terminal);
        }
        batch
    }
}

fn check_transition(meta: &DatasetMeta, t: &Transition) -> std::result::Result<(), String> {
    if t.state.len() != meta.state_dim || t.next_state.len() != meta.state_dim {
        return Err(format!("state width must be {}", meta.state_dim));
    }
    if t.action.len() != meta.action_dim {
        return Err(format!("action width must be {}", meta.action_dim));
    }
    let finite = t
        .state
        .iter()
        .chain(&t.action)
        .chain(&t.next_state)
        .all(|v| v.is_finite());
    if !finite || !t.reward.is_finite() {
        return Err("non-finite value".into());
    }
    if t.reward < meta.reward_min || t.reward > meta.reward_max {
        return Err(format!(
            "reward {} outside declared bounds [{}, {}]",
            t.reward, meta.reward_min, meta.reward_max
        ));
    }
    Ok(())
}

/// Behavior policy used to collect a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BehaviorSpec {
    /// Optimal action (value iteration for tabular tasks, the shortest-path
    /// controller for continuous ones) with probability `1 - eps`, else uniform.
    EpsilonGreedyOptimal(f64),
    Random,
    /// Each episode is optimal with probability `p`, else uniformly random.
    Mixture(f64),
}

impl fmt::Display for BehaviorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BehaviorSpec::EpsilonGreedyOptimal(e) => write!(f, "eps-greedy:{e}"),
            BehaviorSpec::Random => write!(f, "random"),
            BehaviorSpec::Mixture(p) => write!(f, "mixture:{p}"),
        }
    }
}

impl FromStr for BehaviorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = s.trim().split_once(':').unwrap_or((s.trim(), ""));
        let prob = || -> Result<f64> {
            match arg.parse::<f64>() {
                Ok(p) if (0.0..=1.0).contains(&p) => Ok(p),
                _ => Err(Error::Config(format!(
                    "behavior `{s}` needs a probability in [0, 1]"
                ))),
            }
        };
        match name {
            "eps-greedy" => Ok(BehaviorSpec::EpsilonGreedyOptimal(prob()?)),
            "random" if arg.is_empty() => Ok(BehaviorSpec::Random),
            "mixture" => Ok(BehaviorSpec::Mixture(prob()?)),
            _ => Err(Error::Config(format!("unknown behavior policy `{s}`"))),
        }
    }
}

/// Optimal action source for the behavior policy.
enum Expert {
    Greedy(Vec<usize>),
    Controller,
}

impl Expert {
    fn for_env(env: &Env) -> Result<Self> {
        Ok(match env {
            Env::Tabular(m) => {
                let q = value_iteration(m, 1e-10)?;
                Expert::Greedy((0..m.num_states()).map(|s| q.greedy(s)).collect())
            }
            Env::Continuous(_) => Expert::Controller,
        })
    }

    fn act(&self, env: &Env, state: &[f64]) -> Vec<f64> {
        match (self, env) {
            (Expert::Greedy(policy), _) => vec![policy[state[0] as usize] as f64],
            (Expert::Controller, Env::Continuous(c)) => c.expert_action(state),
            (Expert::Controller, Env::Tabular(_)) => {
                unreachable!("tabular envs use greedy experts")
            }
        }
    }
}

/// Rolls out `behavior` from the initial distribution until exactly
/// `num_transitions` records exist. Episodes cut by the horizon keep their
/// last record non-terminal. Deterministic in `seed`.
pub fn generate_dataset(
    spec: &EnvSpec,
    behavior: BehaviorSpec,
    num_transitions: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    let env = spec.build()?;
    let expert = Expert::for_env(&env)?;
    let mut policy_rng = stream(seed, "dataset/behavior");
    let mut env_rng = stream(seed, "dataset/env");
    let mut records = Vec::with_capacity(num_transitions);
    while records.len() < num_transitions {
        let optimal_episode = match behavior {
            BehaviorSpec::Mixture(p) => policy_rng.random::<f64>() < p,
            _ => true,
        };
        let mut state = env.reset(&mut env_rng);
        for _ in 0..env.horizon() {
            if records.len() == num_transitions {
                break;
            }
            let explore = match behavior {
                BehaviorSpec::EpsilonGreedyOptimal(eps) => policy_rng.random::<f64>() < eps,
                BehaviorSpec::Random => true,
                BehaviorSpec::Mixture(_) => !optimal_episode,
            };
            let action = if explore {
                env.random_action(&mut policy_rng)
            } else {
                expert.act(&env, &state)
            };
            let (next, reward, terminal) = env.step(&state, &action, &mut env_rng)?;
            records.push(Transition {
                state: state.clone(),
                action,
                reward,
                next_state: next.clone(),
                terminal,
            });
            if terminal {
                break;
            }
            state = next;
        }
    }
    let (lo, hi) = if records.is_empty() {
        env.reward_bounds()
    } else {
        records
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
                (lo.min(t.reward), hi.max(t.reward))
            })
    };
    let meta = DatasetMeta {
        env: spec.to_string(),
        behavior: behavior.to_string(),
        seed,
        gamma: env.gamma(),
        reward_min: lo,
        reward_max: hi,
        state_dim: env.state_dim(),
        action_dim: env.action_dim(),
        num_transitions: records.len(),
    };
    OfflineDataset::new(meta, records)
}

fn header(meta: &DatasetMeta) -> String {
    let mut cols: Vec<String> = (0..meta.state_dim).map(|i| format!("s{i}")).collect();
    cols.extend((0..meta.action_dim).map(|i| format!("a{i}")));
    cols.push("r".into());
    cols.extend((0..meta.state_dim).map(|i| format!("ns{i}")));
    cols.push("terminal".into());
    cols.join(",")
}

/// Writes the CSV format: a `# FLOQDATA1 <json>` metadata line, the column
/// header, then one row per transition with 17 significant digits.
pub fn save_dataset(ds: &OfflineDataset, path: &Path) -> Result<()> {
    let meta = serde_json::to_string(&ds.meta).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = format!("# {DATASET_MAGIC} {meta}\n{}\n", header(&ds.meta));
    for t in &ds.transitions {
        let mut fields: Vec<String> = t
            .state
            .iter()
            .chain(&t.action)
            .map(|v| format!("{v:.16e}"))
            .collect();
        fields.push(format!("{:.16e}", t.reward));
        fields.extend(t.next_state.iter().map(|v| format!("{v:.16e}")));
        fields.push(if t.terminal { "1" } else { "0" }.into());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<OfflineDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad =
        |line: usize, kind: FormatErrorKind, msg: String| Error::format(path, line, kind, msg);
    let mut lines = text.lines();
    let first = lines.next().unwrap_or("");
    let json = first
        .strip_prefix("# ")
        .and_then(|l| l.strip_prefix(DATASET_MAGIC))
        .and_then(|l| l.strip_prefix(' '))
        .ok_or_else(|| {
            bad(
                1,
                FormatErrorKind::BadMagic,
                format!("expected `# {DATASET_MAGIC} <metadata>`"),
            )
        })?;
    let meta: DatasetMeta = serde_json::from_str(json)
        .map_err(|e| bad(1, FormatErrorKind::BadHeader, format!("metadata: {e}")))?;
    let expected = header(&meta);
    match lines.next() {
        Some(h) if h == expected => {}
        Some(h) => {
            return Err(bad(
                2,
                FormatErrorKind::BadHeader,
                format!("expected columns `{expected}`, found `{h}`"),
            ));
        }
        None => {
            return Err(bad(
                2,
                FormatErrorKind::Truncated,
                "missing column header".into(),
            ))
        }
    }
    let (ds, da) = (meta.state_dim, meta.action_dim);
    let width = 2 * ds + da + 2;
    let mut records = Vec::with_capacity(meta.num_transitions);
    for (i, line) in lines.enumerate() {
        let lineno = i + 3;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(bad(
                lineno,
                FormatErrorKind::DimensionMismatch,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        let mut values = Vec::with_capacity(width - 1);
        for f in &fields[..width - 1] {
            values.push(f.parse::<f64>().map_err(|_| {
                bad(
                    lineno,
                    FormatErrorKind::BadRecord,
                    format!("`{f}` is not a number"),
                )
            })?);
        }
        let terminal = match fields[width - 1] {
            "0" => false,
            "1" => true,
            other => {
                return Err(bad(
                    lineno,
                    FormatErrorKind::BadRecord,
                    format!("terminal flag `{other}` is not 0 or 1"),
                ));
            }
        };
        let t = Transition {
            state: values[..ds].to_vec(),
            action: values[ds..ds + da].to_vec(),
            reward: values[ds + da],
            next_state: values[ds + da + 1..].to_vec(),
            terminal,
        };
        check_transition(&meta, &t).map_err(|msg| bad(lineno, FormatErrorKind::BadRecord, msg))?;
        records.push(t);
    }
    if records.len() != meta.num_transitions {
        let kind = if records.len() < meta.num_transitions {
            FormatErrorKind::Truncated
        } else {
            FormatErrorKind::BadRecord
        };
        return Err(bad(
            records.len() + 3,
            kind,
            format!(
                "metadata declares {} transitions, found {}",
                meta.num_transitions,
                records.len()
            ),
        ));
    }
    Ok(OfflineDataset {
        meta,
        transitions: records,
    })
}
