//! Toy environments with oracle-computable values, behavior-policy dataset
//! generation and the CSV dataset format.

mod continuous;
mod dataset;
mod tabular;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

pub use continuous::{ContinuousEnv, ContinuousKind, Rect};
pub use dataset::{
    generate_dataset, load_dataset, save_dataset, Batch, BehaviorSpec, DatasetMeta, OfflineDataset,
    Transition, DATASET_MAGIC,
};
pub use tabular::TabularMdp;

use crate::error::{Error, Result};

/// Parsed environment description, e.g. `chain:n=3,gamma=0.9` or `point-maze`.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    Chain {
        n: usize,
        gamma: f64,
    },
    Gridworld {
        width: usize,
        height: usize,
        slip: f64,
        gamma: f64,
    },
    PointMaze {
        layout: MazeLayout,
        noise: f64,
        gamma: f64,
    },
    BanditChain {
        gamma: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MazeLayout {
    Wall,
    Open,
}

impl EnvSpec {
    pub fn build(&self) -> Result<Env> {
        Ok(match *self {
            EnvSpec::Chain { n, gamma } => Env::Tabular(TabularMdp::chain(n, gamma)?),
            EnvSpec::Gridworld {
                width,
                height,
                slip,
                gamma,
            } => Env::Tabular(TabularMdp::gridworld(width, height, slip, gamma)?),
            EnvSpec::PointMaze {
                layout: MazeLayout::Wall,
                noise,
                gamma,
            } => Env::Continuous(ContinuousEnv::point_maze(noise, gamma)?),
            EnvSpec::PointMaze {
                layout: MazeLayout::Open,
                noise,
                gamma,
            } => Env::Continuous(ContinuousEnv::open_maze(noise, gamma)?),
            EnvSpec::BanditChain { gamma } => Env::Continuous(ContinuousEnv::bandit_chain(gamma)?),
        })
    }

    /// Every family with its default parameters.
    pub fn builtin() -> Vec<EnvSpec> {
        [
            "chain",
            "gridworld",
            "point-maze",
            "point-maze:layout=open",
            "bandit-chain",
        ]
        .iter()
        .map(|s| s.parse().expect("built-in spec"))
        .collect()
    }
}

impl fmt::Display for EnvSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvSpec::Chain { n, gamma } => write!(f, "chain:n={n},gamma={gamma}"),
            EnvSpec::Gridworld {
                width,
                height,
                slip,
                gamma,
            } => {
                write!(
                    f,
                    "gridworld:width={width},height={height},slip={slip},gamma={gamma}"
                )
            }
            EnvSpec::PointMaze {
                layout,
                noise,
                gamma,
            } => {
                let layout = match layout {
                    MazeLayout::Wall => "wall",
                    MazeLayout::Open => "open",
                };
                write!(f, "point-maze:layout={layout},noise={noise},gamma={gamma}")
            }
            EnvSpec::BanditChain { gamma } => write!(f, "bandit-chain:gamma={gamma}"),
        }
    }
}

impl FromStr for EnvSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (family, rest) = s.trim().split_once(':').unwrap_or((s.trim(), ""));
        let mut params = Vec::new();
        for item in rest.split(',').map(str::trim).filter(|i| !i.is_empty()) {
            let (k, v) = item.split_once('=').ok_or_else(|| {
                Error::Config(format!("environment parameter `{item}` is not key=value"))
            })?;
            params.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut p = Params { family, params };
        let spec = match family {
            "chain" => EnvSpec::Chain {
                n: p.take("n", 3)?,
                gamma: p.take("gamma", 0.9)?,
            },
            "gridworld" => EnvSpec::Gridworld {
                width: p.take("width", 5)?,
                height: p.take("height", 5)?,
                slip: p.take("slip", 0.1)?,
                gamma: p.take("gamma", 0.99)?,
            },
            "point-maze" => {
                let layout = match p.take("layout", "wall".to_string())?.as_str() {
                    "wall" => MazeLayout::Wall,
                    "open" => MazeLayout::Open,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown point-maze layout `{other}`"
                        )))
                    }
                };
                EnvSpec::PointMaze {
                    layout,
                    noise: p.take("noise", 0.0)?,
                    gamma: p.take("gamma", 0.99)?,
                }
            }
            "bandit-chain" => EnvSpec::BanditChain {
                gamma: p.take("gamma", 0.9)?,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown environment family `{other}`"
                )))
            }
        };
        p.finish()?;
        Ok(spec)
    }
}

struct Params<'a> {
    family: &'a str,
    params: Vec<(String, String)>,
}

impl Params<'_> {
    fn take<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.params.iter().position(|(k, _)| k == key) {
            None => Ok(default),
            Some(i) => {
                let (_, v) = self.params.remove(i);
                v.parse().map_err(|_| {
                    Error::Config(format!("{}: cannot parse {key}=`{v}`", self.family))
                })
            }
        }
    }

    fn finish(self) -> Result<()> {
        match self.params.first() {
            None => Ok(()),
            Some((k, _)) => Err(Error::Config(format!(
                "{}: unknown parameter `{k}`",
                self.family
            ))),
        }
    }
}

/// A built environment. Tabular states and actions are stored as indices in
/// raw form and one-hot encoded as network features.
#[derive(Debug, Clone, PartialEq)]
pub enum Env {
    Tabular(TabularMdp),
    Continuous(ContinuousEnv),
}

impl Env {
    pub fn is_discrete(&self) -> bool {
        matches!(self, Env::Tabular(_))
    }

    pub fn gamma(&self) -> f64 {
        match self {
            Env::Tabular(m) => m.gamma(),
            Env::Continuous(c) => c.gamma,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Env::Tabular(m) => m.horizon(),
            Env::Continuous(c) => c.horizon,
        }
    }

    pub fn reward_bounds(&self) -> (f64, f64) {
        match self {
            Env::Tabular(m) => m.reward_bounds(),
            Env::Continuous(c) => c.reward_bounds(),
        }
    }

    /// Width of raw state records.
    pub fn state_dim(&self) -> usize {
        match self {
            Env::Tabular(_) => 1,
            Env::Continuous(c) => c.state_dim(),
        }
    }

    /// Width of raw action records.
    pub fn action_dim(&self) -> usize {
        match self {
            Env::Tabular(_) => 1,
            Env::Continuous(c) => c.action_dim(),
        }
    }

    pub fn state_feature_dim(&self) -> usize {
        match self {
            Env::Tabular(m) => m.num_states(),
            Env::Continuous(c) => c.state_dim(),
        }
    }

    pub fn action_feature_dim(&self) -> usize {
        match self {
            Env::Tabular(m) => m.num_actions(),
            Env::Continuous(c) => c.action_dim(),
        }
    }

    pub fn state_features(&self, raw: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            Env::Tabular(m) => one_hot(raw, m.num_states(), out),
            Env::Continuous(_) => {
                out.copy_from_slice(raw);
                Ok(())
            }
        }
    }

    pub fn action_features(&self, raw: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            Env::Tabular(m) => one_hot(raw, m.num_actions(), out),
            Env::Continuous(_) => {
                out.copy_from_slice(raw);
                Ok(())
            }
        }
    }

    pub fn reset(&self, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            Env::Tabular(m) => vec![m.sample_initial(rng) as f64],
            Env::Continuous(c) => c.start.clone(),
        }
    }

    /// Returns `(next_state, reward, terminal)` in raw form.
    pub fn step(
        &self,
        state: &[f64],
        action: &[f64],
        rng: &mut impl Rng,
    ) -> Result<(Vec<f64>, f64, bool)> {
        match self {
            Env::Tabular(m) => {
                let s = index(state, m.num_states())?;
                let a = index(action, m.num_actions())?;
                let (next, r) = m.step(s, a, rng);
                Ok((vec![next as f64], r, m.is_terminal(next)))
            }
            Env::Continuous(c) => c.step(state, action, rng),
        }
    }

    pub fn random_action(&self, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            Env::Tabular(m) => vec![rng.random_range(0..m.num_actions()) as f64],
            Env::Continuous(c) => c.random_action(rng),
        }
    }

    /// True when `state` counts as having reached the task goal.
    pub fn is_success(&self, state: &[f64]) -> bool {
        match self {
            Env::Tabular(m) => index(state, m.num_states()).is_ok_and(|s| m.is_terminal(s)),
            Env::Continuous(c) => c.in_goal(state),
        }
    }
}

pub(crate) fn index(raw: &[f64], n: usize) -> Result<usize> {
    match raw {
        [x] if x.fract() == 0.0 && *x >= 0.0 && (*x as usize) < n => Ok(*x as usize),
        _ => Err(Error::InvalidParameter(format!(
            "`{raw:?}` is not an index below {n}"
        ))),
    }
}

fn one_hot(raw: &[f64], n: usize, out: &mut [f64]) -> Result<()> {
    let i = index(raw, n)?;
    out.fill(0.0);
    out[i] = 1.0;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_round_trips_through_display() {
        for spec in EnvSpec::builtin() {
            let text = spec.to_string();
            assert_eq!(text.parse::<EnvSpec>().unwrap(), spec);
        }
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(
            "chain:n=3,gamma=0.9".parse::<EnvSpec>().unwrap(),
            EnvSpec::Chain { n: 3, gamma: 0.9 }
        );
        assert!("moon".parse::<EnvSpec>().is_err());
        assert!("chain:n=x".parse::<EnvSpec>().is_err());
        assert!("chain:width=3".parse::<EnvSpec>().is_err());
    }

    #[test]
    fn tabular_features_are_one_hot() {
        let env = EnvSpec::Chain { n: 3, gamma: 0.9 }.build().unwrap();
        let mut out = vec![9.0; 3];
        env.state_features(&[1.0], &mut out).unwrap();
        assert_eq!(out, vec![0.0, 1.0, 0.0]);
        assert!(env.state_features(&[3.0], &mut out).is_err());
        assert!(env.state_features(&[0.5], &mut out).is_err());
    }
}
