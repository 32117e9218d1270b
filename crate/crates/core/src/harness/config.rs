use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::critic::{FlowCriticConfig, FlowLossKind, NoiseInterval, ValueRange};
use crate::encodings::{
    FourierTimeEmbedding, HlGauss, InterpolantEncoding, SigmaSpec, TimeEncoding, DEFAULT_NUM_BINS,
    DEFAULT_TIME_DIM,
};
use crate::envs::{BehaviorSpec, EnvSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticKind {
    Floq,
    /// Direct `[s, a] -> Q` networks; `critic.ensemble` members.
    Monolithic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpolantKind {
    HlGauss,
    Scalar,
    NormalizedScalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeKind {
    Fourier,
    Scalar,
}

/// Which actor supplies `a'` for continuous-action bootstrap targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetActor {
    OneStep,
    Bc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticSettings {
    pub kind: CriticKind,
    pub loss: FlowLossKind,
    pub ensemble: usize,
    pub flow_steps: usize,
    pub target_samples: usize,
    pub kappa: f64,
    pub q_min: Option<f64>,
    pub q_max: Option<f64>,
    pub clipped_double_q: bool,
    pub interpolant: InterpolantKind,
    pub bins: usize,
    pub sigma: SigmaSpec,
    pub time: TimeKind,
    pub time_dim: usize,
    pub hidden: Vec<usize>,
    pub tau: f64,
    pub distill_steps: usize,
    /// Noise draws per `(s, a)` for the reported Q estimate.
    pub eval_noise: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorSettings {
    pub flow_steps: usize,
    pub alpha: f64,
    pub hidden: Vec<usize>,
    pub time_dim: usize,
    pub target: TargetActor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimSettings {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSettings {
    pub path: Option<PathBuf>,
    pub behavior: BehaviorSpec,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineSettings {
    pub steps: usize,
    /// Gaussian exploration noise as a fraction of the action range.
    pub noise: f64,
    /// Random-action probability for discrete actions.
    pub epsilon: f64,
}

/// Full experiment description. Text form is flat `key = value` lines with
/// dotted keys and `#` comments.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub seed: u64,
    pub dataset: DatasetSettings,
    pub critic: CriticSettings,
    pub actor: ActorSettings,
    pub optim: OptimSettings,
    pub online: OnlineSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let wide = vec![512; 4];
        Self {
            env: "point-maze".parse().expect("built-in spec"),
            seed: 0,
            dataset: DatasetSettings {
                path: None,
                behavior: BehaviorSpec::Mixture(0.5),
                size: 20_000,
            },
            critic: CriticSettings {
                kind: CriticKind::Floq,
                loss: FlowLossKind::Full,
                ensemble: 1,
                flow_steps: 8,
                target_samples: 8,
                kappa: 0.1,
                q_min: None,
                q_max: None,
                clipped_double_q: false,
                interpolant: InterpolantKind::HlGauss,
                bins: DEFAULT_NUM_BINS,
                sigma: SigmaSpec::default(),
                time: TimeKind::Fourier,
                time_dim: DEFAULT_TIME_DIM,
                hidden: wide.clone(),
                tau: 0.005,
                distill_steps: 8,
                eval_noise: 8,
            },
            actor: ActorSettings {
                flow_steps: 10,
                alpha: 1.0,
                hidden: wide,
                time_dim: DEFAULT_TIME_DIM,
                target: TargetActor::OneStep,
            },
            optim: OptimSettings {
                lr: 3e-4,
                batch_size: 256,
                steps: 1_000_000,
                eval_interval: 1000,
                eval_episodes: 50,
            },
            online: OnlineSettings {
                steps: 0,
                noise: 0.1,
                epsilon: 0.1,
            },
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    let list = value
        .split(',')
        .map(|v| parse::<usize>(key, v.trim()))
        .collect::<Result<Vec<_>>>()?;
    if list.iter().any(|&w| w == 0) {
        return Err(Error::Config(format!(
            "{key}: layer widths must be positive"
        )));
    }
    Ok(list)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got `{value}`"
        ))),
    }
}

fn parse_optional(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn fmt_optional(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

fn fmt_list(v: &[usize]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_sigma(key: &str, value: &str) -> Result<SigmaSpec> {
    if value == "auto" {
        return Ok(SigmaSpec::default());
    }
    let spec = match value.strip_prefix("fraction:") {
        Some(f) => SigmaSpec::FractionOfSupport(parse(key, f)?),
        None => SigmaSpec::Absolute(parse(key, value)?),
    };
    match spec {
        SigmaSpec::Absolute(s) | SigmaSpec::FractionOfSupport(s) if s > 0.0 && s.is_finite() => {
            Ok(spec)
        }
        _ => Err(Error::Config(format!("{key}: sigma must be positive"))),
    }
}

fn fmt_sigma(s: SigmaSpec) -> String {
    match s {
        SigmaSpec::Absolute(v) => v.to_string(),
        SigmaSpec::FractionOfSupport(f) => format!("fraction:{f}"),
    }
}

impl ExperimentConfig {
    /// Every key in canonical order.
    pub const KEYS: &'static [&'static str] = &[
        "env",
        "seed",
        "dataset.path",
        "dataset.behavior",
        "dataset.size",
        "critic.kind",
        "critic.loss",
        "critic.ensemble",
        "critic.K",
        "critic.m",
        "critic.kappa",
        "critic.q_min",
        "critic.q_max",
        "critic.clipped_double_q",
        "critic.interpolant",
        "critic.bins",
        "critic.sigma",
        "critic.time",
        "critic.time_dim",
        "critic.hidden",
        "critic.tau",
        "critic.K_distill",
        "critic.eval_noise",
        "actor.M",
        "actor.alpha",
        "actor.hidden",
        "actor.time_dim",
        "actor.target",
        "optim.lr",
        "optim.batch_size",
        "optim.steps",
        "optim.eval_interval",
        "optim.eval_episodes",
        "online.steps",
        "online.noise",
        "online.epsilon",
    ];

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let c = &mut self.critic;
        match key {
            "env" => self.env = v.parse()?,
            "seed" => self.seed = parse(key, v)?,
            "dataset.path" => {
                self.dataset.path = if v.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(v))
                }
            }
            "dataset.behavior" => self.dataset.behavior = v.parse()?,
            "dataset.size" => self.dataset.size = parse(key, v)?,
            "critic.kind" => {
                c.kind = match v {
                    "floq" => CriticKind::Floq,
                    "monolithic" => CriticKind::Monolithic,
                    _ => {
                        return Err(Error::Config(format!(
                            "{key}: expected floq or monolithic, got `{v}`"
                        )))
                    }
                }
            }
            "critic.loss" => {
                c.loss = match v {
                    "full" => FlowLossKind::Full,
                    "t0-only" => FlowLossKind::T0Only,
                    _ => {
                        return Err(Error::Config(format!(
                            "{key}: expected full or t0-only, got `{v}`"
                        )))
                    }
                }
            }
            "critic.ensemble" => c.ensemble = parse(key, v)?,
            "critic.K" => c.flow_steps = parse(key, v)?,
            "critic.m" => c.target_samples = parse(key, v)?,
            "critic.kappa" => c.kappa = parse(key, v)?,
            "critic.q_min" => c.q_min = parse_optional(key, v)?,
            "critic.q_max" => c.q_max = parse_optional(key, v)?,
            "critic.clipped_double_q" => c.clipped_double_q = parse_bool(key, v)?,
            "critic.interpolant" => {
                c.interpolant = match v {
                    "hl-gauss" => InterpolantKind::HlGauss,
                    "scalar" => InterpolantKind::Scalar,
                    "normalized-scalar" => InterpolantKind::NormalizedScalar,
                    _ => {
                        return Err(Error::Config(format!(
                            "{key}: unknown interpolant embedding `{v}`"
                        )))
                    }
                }
            }
            "critic.bins" => c.bins = parse(key, v)?,
            "critic.sigma" => c.sigma = parse_sigma(key, v)?,
            "critic.time" => {
                c.time = match v {
                    "fourier" => TimeKind::Fourier,
                    "scalar" => TimeKind::Scalar,
                    _ => {
                        return Err(Error::Config(format!(
                            "{key}: expected fourier or scalar, got `{v}`"
                        )))
                    }
                }
            }
            "critic.time_dim" => c.time_dim = parse(key, v)?,
            "critic.hidden" => c.hidden = parse_list(key, v)?,
            "critic.tau" => c.tau = parse(key, v)?,
            "critic.K_distill" => c.distill_steps = parse(key, v)?,
            "critic.eval_noise" => c.eval_noise = parse(key, v)?,
            "actor.M" => self.actor.flow_steps = parse(key, v)?,
            "actor.alpha" => self.actor.alpha = parse(key, v)?,
            "actor.hidden" => self.actor.hidden = parse_list(key, v)?,
            "actor.time_dim" => self.actor.time_dim = parse(key, v)?,
            "actor.target" => {
                self.actor.target = match v {
                    "one-step" => TargetActor::OneStep,
                    "bc" => TargetActor::Bc,
                    _ => {
                        return Err(Error::Config(format!(
                            "{key}: expected one-step or bc, got `{v}`"
                        )))
                    }
                }
            }
            "optim.lr" => self.optim.lr = parse(key, v)?,
            "optim.batch_size" => self.optim.batch_size = parse(key, v)?,
            "optim.steps" => self.optim.steps = parse(key, v)?,
            "optim.eval_interval" => self.optim.eval_interval = parse(key, v)?,
            "optim.eval_episodes" => self.optim.eval_episodes = parse(key, v)?,
            "online.steps" => self.online.steps = parse(key, v)?,
            "online.noise" => self.online.noise = parse(key, v)?,
            "online.epsilon" => self.online.epsilon = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let c = &self.critic;
        Some(match key {
            "env" => self.env.to_string(),
            "seed" => self.seed.to_string(),
            "dataset.path" => self
                .dataset
                .path
                .as_ref()
                .map_or(String::new(), |p| p.display().to_string()),
            "dataset.behavior" => self.dataset.behavior.to_string(),
            "dataset.size" => self.dataset.size.to_string(),
            "critic.kind" => match c.kind {
                CriticKind::Floq => "floq".into(),
                CriticKind::Monolithic => "monolithic".into(),
            },
            "critic.loss" => match c.loss {
                FlowLossKind::Full => "full".into(),
                FlowLossKind::T0Only => "t0-only".into(),
            },
            "critic.ensemble" => c.ensemble.to_string(),
            "critic.K" => c.flow_steps.to_string(),
            "critic.m" => c.target_samples.to_string(),
            "critic.kappa" => c.kappa.to_string(),
            "critic.q_min" => fmt_optional(c.q_min),
            "critic.q_max" => fmt_optional(c.q_max),
            "critic.clipped_double_q" => c.clipped_double_q.to_string(),
            "critic.interpolant" => match c.interpolant {
                InterpolantKind::HlGauss => "hl-gauss".into(),
                InterpolantKind::Scalar => "scalar".into(),
                InterpolantKind::NormalizedScalar => "normalized-scalar".into(),
            },
            "critic.bins" => c.bins.to_string(),
            "critic.sigma" => fmt_sigma(c.sigma),
            "critic.time" => match c.time {
                TimeKind::Fourier => "fourier".into(),
                TimeKind::Scalar => "scalar".into(),
            },
            "critic.time_dim" => c.time_dim.to_string(),
            "critic.hidden" => fmt_list(&c.hidden),
            "critic.tau" => c.tau.to_string(),
            "critic.K_distill" => c.distill_steps.to_string(),
            "critic.eval_noise" => c.eval_noise.to_string(),
            "actor.M" => self.actor.flow_steps.to_string(),
            "actor.alpha" => self.actor.alpha.to_string(),
            "actor.hidden" => fmt_list(&self.actor.hidden),
            "actor.time_dim" => self.actor.time_dim.to_string(),
            "actor.target" => match self.actor.target {
                TargetActor::OneStep => "one-step".into(),
                TargetActor::Bc => "bc".into(),
            },
            "optim.lr" => self.optim.lr.to_string(),
            "optim.batch_size" => self.optim.batch_size.to_string(),
            "optim.steps" => self.optim.steps.to_string(),
            "optim.eval_interval" => self.optim.eval_interval.to_string(),
            "optim.eval_episodes" => self.optim.eval_episodes.to_string(),
            "online.steps" => self.online.steps.to_string(),
            "online.noise" => self.online.noise.to_string(),
            "online.epsilon" => self.online.epsilon.to_string(),
            _ => return None,
        })
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        Self::KEYS
            .iter()
            .map(|k| (k.to_string(), self.get(k).expect("canonical key")))
            .collect()
    }

    /// Keys whose values differ between two configurations.
    pub fn diff(&self, other: &Self) -> Vec<String> {
        self.to_pairs()
            .into_iter()
            .zip(other.to_pairs())
            .filter(|(a, b)| a.1 != b.1)
            .map(|(a, _)| a.0)
            .collect()
    }

    /// Applies `key = value` lines on top of the defaults.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::parse_text(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if let Some(p) = &self.dataset.path {
            if !p.exists() {
                return Err(Error::Config(format!(
                    "dataset file {} does not exist",
                    p.display()
                )));
            }
        }
        let c = &self.critic;
        if c.flow_steps == 0 || c.target_samples == 0 || c.distill_steps == 0 || c.eval_noise == 0 {
            return bad(
                "critic.K, critic.m, critic.K_distill and critic.eval_noise must be at least 1",
            );
        }
        if c.ensemble == 0 {
            return bad("critic.ensemble must be at least 1");
        }
        if !(0.0..=1.0).contains(&c.kappa) {
            return bad("critic.kappa must lie in [0, 1]");
        }
        if c.bins < 2 {
            return bad("critic.bins must be at least 2");
        }
        if c.time == TimeKind::Fourier && (c.time_dim < 2 || c.time_dim % 2 != 0) {
            return bad("critic.time_dim must be a positive even number");
        }
        if self.actor.time_dim < 2 || self.actor.time_dim % 2 != 0 {
            return bad("actor.time_dim must be a positive even number");
        }
        if !(0.0..=1.0).contains(&c.tau) {
            return bad("critic.tau must lie in [0, 1]");
        }
        if self.actor.flow_steps == 0 || !(self.actor.alpha >= 0.0) {
            return bad("actor.M must be positive and actor.alpha non-negative");
        }
        if !(self.optim.lr > 0.0) || self.optim.batch_size == 0 || self.optim.eval_interval == 0 {
            return bad("optim.lr, optim.batch_size and optim.eval_interval must be positive");
        }
        if self.optim.eval_episodes == 0 {
            return bad("optim.eval_episodes must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.online.epsilon) || !(self.online.noise >= 0.0) {
            return bad("online.epsilon must lie in [0, 1] and online.noise be non-negative");
        }
        Ok(())
    }

    /// Q range from the override keys, else from reward bounds.
    pub fn value_range(&self, reward_bounds: (f64, f64), gamma: f64) -> Result<ValueRange> {
        let auto = ValueRange::from_rewards(reward_bounds.0, reward_bounds.1, gamma)?;
        ValueRange::new(
            self.critic.q_min.unwrap_or(auto.q_min),
            self.critic.q_max.unwrap_or(auto.q_max),
        )
    }

    pub fn flow_config(&self, range: ValueRange, gamma: f64) -> Result<FlowCriticConfig> {
        let c = &self.critic;
        let interpolant = match c.interpolant {
            InterpolantKind::HlGauss => InterpolantEncoding::HlGauss(HlGauss::for_value_range(
                c.bins,
                range.q_min,
                range.q_max,
                c.sigma,
            )?),
            InterpolantKind::Scalar => InterpolantEncoding::Scalar,
            InterpolantKind::NormalizedScalar => InterpolantEncoding::NormalizedScalar {
                v_min: range.q_min,
                v_max: range.q_max,
            },
        };
        let cfg = FlowCriticConfig {
            flow_steps: c.flow_steps,
            target_samples: c.target_samples,
            noise: NoiseInterval::from_kappa(range, c.kappa)?,
            value_range: range,
            gamma,
            tau: c.tau,
            interpolant,
            time: self.critic_time()?,
            clipped_double_q: c.clipped_double_q,
            distill_steps: c.distill_steps,
            loss: c.loss,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn critic_time(&self) -> Result<TimeEncoding> {
        Ok(match self.critic.time {
            TimeKind::Fourier => {
                TimeEncoding::Fourier(FourierTimeEmbedding::new(self.critic.time_dim)?)
            }
            TimeKind::Scalar => TimeEncoding::Scalar,
        })
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_pairs() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = ExperimentConfig::default();
        assert_eq!(c.optim.lr, 3e-4);
        assert_eq!(c.optim.batch_size, 256);
        assert_eq!(c.critic.tau, 0.005);
        assert_eq!((c.critic.flow_steps, c.critic.target_samples), (8, 8));
        assert_eq!(c.critic.time_dim, 64);
        assert_eq!(c.critic.kappa, 0.1);
        assert_eq!(c.actor.flow_steps, 10);
        assert_eq!(c.env.build().unwrap().gamma(), 0.99);
    }

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::default();
        c.set("critic.sigma", "16").unwrap();
        c.set("critic.hidden", "64,64").unwrap();
        c.set("env", "gridworld:width=4").unwrap();
        let back = ExperimentConfig::parse_text(&c.to_string()).unwrap();
        assert_eq!(back, c);
        assert!(c.diff(&back).is_empty());
    }

    #[test]
    fn comments_and_errors() {
        let c = ExperimentConfig::parse_text("# header\ncritic.K = 4  # fewer steps\n\n").unwrap();
        assert_eq!(c.critic.flow_steps, 4);
        assert!(ExperimentConfig::parse_text("critic.K 4").is_err());
        assert!(ExperimentConfig::parse_text("critic.nope = 4").is_err());
        assert!(ExperimentConfig::parse_text("critic.K = four").is_err());
    }

    #[test]
    fn diff_names_changed_keys() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.set("critic.kappa", "0.25").unwrap();
        assert_eq!(a.diff(&b), vec!["critic.kappa".to_string()]);
    }

    #[test]
    fn missing_dataset_file_is_a_config_error() {
        let mut c = ExperimentConfig::default();
        c.set("dataset.path", "/definitely/not/here.csv").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
