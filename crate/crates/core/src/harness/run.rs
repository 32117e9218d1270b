use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;

use super::agent::Agent;
use super::config::{CriticKind, ExperimentConfig, InterpolantKind};
use super::metrics::{format_row, header, write_metrics, MetricsRow, TrainingMetrics};
use crate::encodings::{InterpolantEncoding, COVERAGE_THRESHOLD};
use crate::envs::{generate_dataset, load_dataset, Env, OfflineDataset, Transition};
use crate::error::{Error, Result};
use crate::oracles::{value_iteration, QTable, DEFAULT_TOLERANCE};
use crate::rng::stream;

/// Seed list for repeated runs.
pub const SEEDS: [u64; 3] = [0, 1, 2];

/// Transitions sampled once per run for the mean-Q and curvature columns.
const PROBE_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub mean_return: f64,
    pub success_rate: f64,
    /// Standard error of the mean return.
    pub std_err: f64,
    pub episodes: usize,
}

pub struct TrainOutcome {
    pub metrics: TrainingMetrics,
    pub agent: Agent,
}

pub struct FinetuneOutcome {
    pub metrics: TrainingMetrics,
    pub agent: Agent,
    pub buffer_before: usize,
    pub buffer_after: usize,
}

/// The configured dataset file, or a freshly generated one. A file recorded
/// for a different environment is rejected.
pub fn load_or_generate_dataset(config: &ExperimentConfig) -> Result<OfflineDataset> {
    let ds = match &config.dataset.path {
        Some(path) => load_dataset(path)?,
        None => generate_dataset(
            &config.env,
            config.dataset.behavior,
            config.dataset.size,
            config.seed,
        )?,
    };
    let env = config.env.build()?;
    if ds.meta.state_dim != env.state_dim() || ds.meta.action_dim != env.action_dim() {
        return Err(Error::Config(format!(
            "dataset has state/action widths {}/{}, environment {} expects {}/{}",
            ds.meta.state_dim,
            ds.meta.action_dim,
            config.env,
            env.state_dim(),
            env.action_dim()
        )));
    }
    if ds.is_empty() {
        return Err(Error::Config("dataset holds no transitions".into()));
    }
    Ok(ds)
}

/// Rolls out the agent's deterministic policy for `episodes` episodes.
pub fn evaluate_agent(agent: &Agent, episodes: usize, rng: &mut impl Rng) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::InvalidParameter(
            "evaluation needs at least one episode".into(),
        ));
    }
    let env = &agent.env;
    let mut returns = Vec::with_capacity(episodes);
    let mut successes = 0usize;
    for _ in 0..episodes {
        let mut state = env.reset(rng);
        let mut total = 0.0;
        let mut success = env.is_success(&state);
        for _ in 0..env.horizon() {
            if success {
                break;
            }
            let row = Array2::from_shape_vec((1, state.len()), state.clone()).expect("row");
            let action = agent.act(row.view(), rng)?.row(0).to_vec();
            let (next, r, done) = env.step(&state, &action, rng)?;
            total += r;
            state = next;
            success = env.is_success(&state);
            if done {
                break;
            }
        }
        successes += success as usize;
        returns.push(total);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let std_err = if returns.len() < 2 {
        0.0
    } else {
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    };
    Ok(EvalReport {
        mean_return: mean,
        success_rate: successes as f64 / n,
        std_err,
        episodes,
    })
}

/// Loads a checkpoint and evaluates it with the evaluation stream of its
/// training step count.
pub fn evaluate(
    checkpoint: &Path,
    config: Option<&ExperimentConfig>,
    episodes: usize,
) -> Result<EvalReport> {
    let agent = match config {
        Some(c) => Agent::load_with(checkpoint, c)?,
        None => Agent::load(checkpoint)?,
    };
    let mut rng = stream(agent.config.seed, &format!("eval/{}", agent.steps_done()));
    evaluate_agent(&agent, episodes, &mut rng)
}

struct Evaluator {
    probes: Array2<f64>,
    /// Non-terminal `[s, a]` rows and their oracle values (tabular only).
    oracle: Option<(Array2<f64>, Vec<f64>)>,
}

impl Evaluator {
    fn new(agent: &Agent, data: &OfflineDataset) -> Result<Self> {
        let mut rng = stream(agent.config.seed, "eval/probes");
        let batch = data.sample_batch(&mut rng, PROBE_SIZE.min(data.len()))?;
        let probes = agent.cond(batch.states.view(), batch.actions.view())?;
        let oracle = match &agent.env {
            Env::Tabular(mdp) => {
                let q = value_iteration(mdp, DEFAULT_TOLERANCE)?;
                Some(oracle_rows(
                    agent,
                    mdp.num_states(),
                    mdp.num_actions(),
                    |s| mdp.is_terminal(s),
                    &q,
                )?)
            }
            Env::Continuous(_) => None,
        };
        Ok(Self { probes, oracle })
    }

    fn row(
        &self,
        agent: &Agent,
        step: usize,
        critic_loss: Option<f64>,
        distill: Option<f64>,
    ) -> Result<MetricsRow> {
        let seed = agent.config.seed;
        let mut rng = stream(seed, &format!("eval/{}/critic", agent.steps_done()));
        let q = agent.q_values(self.probes.view(), &mut rng)?;
        let mean_q = q.iter().sum::<f64>() / q.len() as f64;
        let oracle_gap = match &self.oracle {
            Some((cond, target)) => {
                let q = agent.q_values(cond.view(), &mut rng)?;
                Some(
                    q.iter()
                        .zip(target)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max),
                )
            }
            None => None,
        };
        let curvature = agent.curvature(self.probes.view(), &mut rng)?;
        let mut policy_rng = stream(seed, &format!("eval/{}", agent.steps_done()));
        let report = evaluate_agent(agent, agent.config.optim.eval_episodes, &mut policy_rng)?;
        let row = MetricsRow {
            step,
            critic_loss,
            mean_q: Some(mean_q),
            oracle_gap,
            curvature,
            policy_score: Some(report.mean_return),
            success_rate: Some(report.success_rate),
            distill_loss: distill,
            online_return: None,
        };
        for v in [
            row.critic_loss,
            row.mean_q,
            row.oracle_gap,
            row.curvature,
            row.distill_loss,
        ]
        .into_iter()
        .flatten()
        {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("step {step}: evaluation metrics")));
            }
        }
        Ok(row)
    }
}

fn oracle_rows(
    agent: &Agent,
    num_states: usize,
    num_actions: usize,
    terminal: impl Fn(usize) -> bool,
    q: &QTable,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let mut states = Vec::new();
    let mut actions = Vec::new();
    let mut target = Vec::new();
    for s in (0..num_states).filter(|&s| !terminal(s)) {
        for a in 0..num_actions {
            states.push(s as f64);
            actions.push(a as f64);
            target.push(q.get(s, a));
        }
    }
    let n = target.len();
    let s = Array2::from_shape_vec((n, 1), states).expect("column");
    let a = Array2::from_shape_vec((n, 1), actions).expect("column");
    Ok((agent.cond(s.view(), a.view())?, target))
}

#[derive(Default)]
struct Running {
    critic: f64,
    distill: f64,
    count: usize,
}

impl Running {
    fn take(&mut self, has_distill: bool) -> (Option<f64>, Option<f64>) {
        if self.count == 0 {
            return (None, None);
        }
        let n = self.count as f64;
        let out = (
            Some(self.critic / n),
            has_distill.then_some(self.distill / n),
        );
        *self = Self::default();
        out
    }
}

fn is_eval_step(step: usize, interval: usize, last: usize) -> bool {
    step % interval == 0 || step == last
}

/// Offline training per the configured update order. With `out_dir`, writes
/// `metrics.csv` and the final checkpoint under `checkpoint/`. Zero steps give
/// an empty metrics body and the initial checkpoint.
pub fn train_offline(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let data = load_or_generate_dataset(config)?;
    let env = config.env.build()?;
    let bounds = (data.meta.reward_min, data.meta.reward_max);
    let mut agent = Agent::new(config, env, bounds)?;
    let evaluator = Evaluator::new(&agent, &data)?;
    let mut batch_rng = stream(config.seed, "train/batch");
    let steps = config.optim.steps;
    let mut metrics = Vec::new();
    let mut running = Running::default();
    let has_distill = config.critic.kind == CriticKind::Floq;
    for step in 1..=steps {
        let batch = data.sample_batch(&mut batch_rng, config.optim.batch_size)?;
        let losses = agent.update(&batch)?;
        running.critic += losses.critic;
        running.distill += losses.distill.unwrap_or(0.0);
        running.count += 1;
        if is_eval_step(step, config.optim.eval_interval, steps) {
            let (critic, distill) = running.take(has_distill);
            metrics.push(evaluator.row(&agent, step, critic, distill)?);
        }
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_metrics(&metrics, &dir.join("metrics.csv"))?;
        agent.save(&dir.join("checkpoint"))?;
    }
    Ok(TrainOutcome { metrics, agent })
}

/// Online fine-tuning from a checkpoint: the replay buffer starts as the
/// offline dataset and grows by one exploratory transition per gradient step.
/// The first row evaluates the checkpoint before any online step.
pub fn finetune_online(
    config: &ExperimentConfig,
    checkpoint: &Path,
    out_dir: Option<&Path>,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    let mut buffer = load_or_generate_dataset(config)?;
    let mut agent = Agent::load_with(checkpoint, config)?;
    if agent.env.state_dim() != buffer.meta.state_dim
        || agent.env.action_dim() != buffer.meta.action_dim
    {
        return Err(Error::Config(
            "checkpoint environment does not match the dataset".into(),
        ));
    }
    let evaluator = Evaluator::new(&agent, &buffer)?;
    let buffer_before = buffer.len();
    let seed = config.seed;
    let mut env_rng = stream(seed, "online/env");
    let mut explore_rng = stream(seed, "online/explore");
    let mut batch_rng = stream(seed, "online/batch");
    let steps = config.online.steps;
    let has_distill = config.critic.kind == CriticKind::Floq;

    let mut metrics = vec![evaluator.row(&agent, 0, None, None)?];
    let mut running = Running::default();
    let mut state = agent.env.reset(&mut env_rng);
    let mut episode_return = 0.0;
    let mut episode_len = 0usize;
    let mut finished: Vec<f64> = Vec::new();
    for step in 1..=steps {
        let action = agent.explore(&state, &mut explore_rng)?;
        let (next, r, done) = agent.env.step(&state, &action, &mut env_rng)?;
        buffer.push(Transition {
            state: state.clone(),
            action,
            reward: r,
            next_state: next.clone(),
            terminal: done,
        })?;
        episode_return += r;
        episode_len += 1;
        state = next;
        if done || episode_len >= agent.env.horizon() {
            finished.push(episode_return);
            episode_return = 0.0;
            episode_len = 0;
            state = agent.env.reset(&mut env_rng);
        }

        let batch = buffer.sample_batch(&mut batch_rng, config.optim.batch_size)?;
        let losses = agent.update(&batch)?;
        running.critic += losses.critic;
        running.distill += losses.distill.unwrap_or(0.0);
        running.count += 1;
        if is_eval_step(step, config.optim.eval_interval, steps) {
            let (critic, distill) = running.take(has_distill);
            let mut row = evaluator.row(&agent, step, critic, distill)?;
            if !finished.is_empty() {
                row.online_return = Some(finished.iter().sum::<f64>() / finished.len() as f64);
                finished.clear();
            }
            metrics.push(row);
        }
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_metrics(&metrics, &dir.join("metrics.csv"))?;
        agent.save(&dir.join("checkpoint"))?;
    }
    Ok(FinetuneOutcome {
        buffer_after: buffer.len(),
        metrics,
        agent,
        buffer_before,
    })
}

/// Swept configuration field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    FlowSteps,
    /// Monolithic ensemble size; every run in the sweep uses the monolithic critic.
    Ensemble,
    /// `full` or `t0-only` flow loss.
    Loss,
    Interpolant,
    Sigma,
    Time,
    Kappa,
    DistillSteps,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 8] = [
        AblationAxis::FlowSteps,
        AblationAxis::Ensemble,
        AblationAxis::Loss,
        AblationAxis::Interpolant,
        AblationAxis::Sigma,
        AblationAxis::Time,
        AblationAxis::Kappa,
        AblationAxis::DistillSteps,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AblationAxis::FlowSteps => "K",
            AblationAxis::Ensemble => "ensemble",
            AblationAxis::Loss => "t0-only",
            AblationAxis::Interpolant => "interpolant",
            AblationAxis::Sigma => "sigma",
            AblationAxis::Time => "time",
            AblationAxis::Kappa => "kappa",
            AblationAxis::DistillSteps => "K_distill",
        }
    }

    /// Configuration key the axis writes.
    pub fn key(&self) -> &'static str {
        match self {
            AblationAxis::FlowSteps => "critic.K",
            AblationAxis::Ensemble => "critic.ensemble",
            AblationAxis::Loss => "critic.loss",
            AblationAxis::Interpolant => "critic.interpolant",
            AblationAxis::Sigma => "critic.sigma",
            AblationAxis::Time => "critic.time",
            AblationAxis::Kappa => "critic.kappa",
            AblationAxis::DistillSteps => "critic.K_distill",
        }
    }

    /// One configuration per `(value, seed)`, values outermost.
    pub fn configs(
        &self,
        base: &ExperimentConfig,
        values: &[String],
        seeds: &[u64],
    ) -> Result<Vec<ExperimentConfig>> {
        if values.is_empty() || seeds.is_empty() {
            return Err(Error::Config(
                "ablation needs at least one value and one seed".into(),
            ));
        }
        let mut base = base.clone();
        if *self == AblationAxis::Ensemble {
            base.critic.kind = CriticKind::Monolithic;
        }
        let mut out = Vec::new();
        for v in values {
            let mut cfg = base.clone();
            cfg.set(self.key(), v)
                .map_err(|e| Error::Config(format!("ablation axis {}: {e}", self.name())))?;
            for &seed in seeds {
                let mut c = cfg.clone();
                c.seed = seed;
                c.validate()?;
                out.push(c);
            }
        }
        Ok(out)
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s || a.key() == s)
            .or(match s {
                "loss" => Some(AblationAxis::Loss),
                "kappa" | "κ" => Some(AblationAxis::Kappa),
                "embedding-sigma" | "σ" => Some(AblationAxis::Sigma),
                _ => None,
            })
            .ok_or_else(|| Error::Config(format!("unknown ablation axis `{s}`")))
    }
}

pub struct AblationRow {
    pub axis: AblationAxis,
    pub value: String,
    pub seed: u64,
    pub metrics: TrainingMetrics,
    /// HL-Gauss coverage fraction at the noise-interval midpoint before training.
    pub coverage_init: Option<f64>,
}

fn coverage_init(agent: &Agent) -> Option<f64> {
    let cfg = agent.flow_config()?;
    match &cfg.interpolant {
        InterpolantEncoding::HlGauss(hl) => {
            Some(hl.coverage_fraction(cfg.noise.midpoint(), COVERAGE_THRESHOLD))
        }
        _ => None,
    }
}

/// Coverage at initialization for a configuration, without training.
pub fn initial_coverage(
    config: &ExperimentConfig,
    reward_bounds: (f64, f64),
) -> Result<Option<f64>> {
    if config.critic.kind != CriticKind::Floq
        || config.critic.interpolant != InterpolantKind::HlGauss
    {
        return Ok(None);
    }
    let env = config.env.build()?;
    let range = config.value_range(reward_bounds, env.gamma())?;
    let cfg = config.flow_config(range, env.gamma())?;
    Ok(match &cfg.interpolant {
        InterpolantEncoding::HlGauss(hl) => {
            Some(hl.coverage_fraction(cfg.noise.midpoint(), COVERAGE_THRESHOLD))
        }
        _ => None,
    })
}

/// One offline run per `(value, seed)`. With `out_dir`, each run writes to
/// `<axis>=<value>/seed=<seed>/` and the combined long table goes to
/// `ablation.csv`.
pub fn ablate(
    base: &ExperimentConfig,
    axis: AblationAxis,
    values: &[String],
    seeds: &[u64],
    out_dir: Option<&Path>,
) -> Result<Vec<AblationRow>> {
    let configs = axis.configs(base, values, seeds)?;
    let mut rows = Vec::with_capacity(configs.len());
    for (i, cfg) in configs.iter().enumerate() {
        let value = values[i / seeds.len()].trim().to_string();
        let run_dir: Option<PathBuf> = out_dir.map(|d| {
            d.join(format!("{}={}", axis.name(), value))
                .join(format!("seed={}", cfg.seed))
        });
        let outcome = train_offline(cfg, run_dir.as_deref())?;
        rows.push(AblationRow {
            axis,
            value,
            seed: cfg.seed,
            coverage_init: coverage_init(&outcome.agent),
            metrics: outcome.metrics,
        });
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_ablation(&rows, &dir.join("ablation.csv"))?;
    }
    Ok(rows)
}

pub fn write_ablation(rows: &[AblationRow], path: &Path) -> Result<()> {
    let mut text = format!("axis,value,seed,coverage_init,{}\n", header());
    for row in rows {
        let cov = row
            .coverage_init
            .map(|c| format!("{c:.12e}"))
            .unwrap_or_default();
        for m in &row.metrics {
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                row.axis,
                row.value,
                row.seed,
                cov,
                format_row(m)
            ));
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
