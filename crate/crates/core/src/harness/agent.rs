use std::fs;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{CriticKind, ExperimentConfig, TargetActor};
use crate::critic::{
    bootstrap_targets, curvature, floq_loss, monolithic_targets, monolithic_td_loss, q_value,
    CriticEnsemble, FieldLayout, FlowCriticConfig, MonolithicCritic, Velocity, VelocityField,
};
use crate::envs::{Batch, Env};
use crate::error::{Error, Result};
use crate::nn::{load_network, save_network, Adam, Mlp};
use crate::policy::{
    bc_flow_loss, distill_loss, one_step_policy_loss, ActionBox, ActionCritic, BcFlowPolicy,
    DistilledCritic, OneStepPolicy,
};
use crate::rng::{stream, StreamRng};

/// One entry of the per-step update order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Critic,
    Distill,
    BcPolicy,
    OneStepPolicy,
    Ema,
}

/// Loss values of one update; `None` where a stage does not apply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub critic: f64,
    pub distill: Option<f64>,
    pub bc: Option<f64>,
    pub actor: Option<f64>,
}

pub enum Critic {
    Floq {
        cfg: FlowCriticConfig,
        /// Two fields when clipped double Q is on.
        fields: Vec<VelocityField>,
        opts: Vec<Adam>,
        distill: DistilledCritic,
        distill_opt: Adam,
    },
    Monolithic {
        ensemble: CriticEnsemble,
        opts: Vec<Adam>,
    },
}

pub struct Actor {
    pub bc: BcFlowPolicy,
    pub bc_opt: Adam,
    pub one_step: OneStepPolicy,
    pub one_step_opt: Adam,
}

struct Streams {
    target_action: StreamRng,
    critic: StreamRng,
    distill: StreamRng,
    bc: StreamRng,
    actor: StreamRng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            target_action: stream(seed, "train/target-action"),
            critic: stream(seed, "train/critic"),
            distill: stream(seed, "train/distill"),
            bc: stream(seed, "train/bc"),
            actor: stream(seed, "train/actor"),
        }
    }
}

/// Critic plus (for continuous actions) the actor stack, updated in the order
/// critic, distill, BC policy, one-step policy, EMA.
pub struct Agent {
    pub env: Env,
    pub config: ExperimentConfig,
    pub critic: Critic,
    pub actor: Option<Actor>,
    streams: Streams,
    steps_done: usize,
    /// When set, every update appends its stages here.
    pub stage_log: Option<Vec<Stage>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    format: String,
    kind: String,
    members: usize,
    steps_done: usize,
    flow: Option<FlowCriticConfig>,
}

const SIDECAR_FORMAT: &str = "floq-critic/1";

fn nonfinite_context(step: usize, loss: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::NonFinite(msg) => Error::NonFinite(format!("step {step}: {loss}: {msg}")),
        other => other,
    }
}

fn hstack(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), a.ncols() + b.ncols()));
    out.slice_mut(s![.., ..a.ncols()]).assign(&a);
    out.slice_mut(s![.., a.ncols()..]).assign(&b);
    out
}

impl Agent {
    /// Fresh agent. `reward_bounds` come from the dataset and set the Q range
    /// unless the configuration overrides it.
    pub fn new(config: &ExperimentConfig, env: Env, reward_bounds: (f64, f64)) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let (ds, da) = (env.state_feature_dim(), env.action_feature_dim());
        let c = &config.critic;
        let lr = config.optim.lr;
        let critic = match c.kind {
            CriticKind::Floq => {
                let range = config.value_range(reward_bounds, env.gamma())?;
                let cfg = config.flow_config(range, env.gamma())?;
                let layout = FieldLayout {
                    state_dim: ds,
                    action_dim: da,
                    interpolant: cfg.interpolant.clone(),
                    time: cfg.time.clone(),
                };
                let mut rng = stream(seed, "init/critic");
                let count = if cfg.clipped_double_q { 2 } else { 1 };
                let fields = (0..count)
                    .map(|_| VelocityField::new(layout.clone(), &c.hidden, cfg.tau, &mut rng))
                    .collect::<Result<Vec<_>>>()?;
                let opts = fields
                    .iter()
                    .map(|f| Adam::new(f.online_net().num_params(), lr))
                    .collect();
                let distill =
                    DistilledCritic::new(ds + da, &c.hidden, &mut stream(seed, "init/distill"))?;
                let distill_opt = Adam::new(distill.net().num_params(), lr);
                Critic::Floq {
                    cfg,
                    fields,
                    opts,
                    distill,
                    distill_opt,
                }
            }
            CriticKind::Monolithic => {
                let ensemble = CriticEnsemble::new(
                    c.ensemble,
                    ds + da,
                    &c.hidden,
                    c.tau,
                    &mut stream(seed, "init/critic"),
                )?;
                let opts = ensemble
                    .members
                    .iter()
                    .map(|m| Adam::new(m.net.num_params(), lr))
                    .collect();
                Critic::Monolithic { ensemble, opts }
            }
        };
        let actor = match &env {
            Env::Tabular(_) => None,
            Env::Continuous(ce) => {
                let (lo, hi) = ce.action_bounds();
                let bounds = ActionBox::new(lo, hi)?;
                let a = &config.actor;
                let time = crate::encodings::TimeEncoding::Fourier(
                    crate::encodings::FourierTimeEmbedding::new(a.time_dim)?,
                );
                let bc = BcFlowPolicy::new(
                    ds,
                    da,
                    &a.hidden,
                    time,
                    a.flow_steps,
                    bounds,
                    &mut stream(seed, "init/bc"),
                )?;
                let one_step =
                    OneStepPolicy::new(ds, da, &a.hidden, bounds, &mut stream(seed, "init/actor"))?;
                Some(Actor {
                    bc_opt: Adam::new(bc.net.num_params(), lr),
                    one_step_opt: Adam::new(one_step.net.num_params(), lr),
                    bc,
                    one_step,
                })
            }
        };
        Ok(Self {
            env,
            config: config.clone(),
            critic,
            actor,
            streams: Streams::new(seed),
            steps_done: 0,
            stage_log: None,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    pub fn flow_config(&self) -> Option<&FlowCriticConfig> {
        match &self.critic {
            Critic::Floq { cfg, .. } => Some(cfg),
            Critic::Monolithic { .. } => None,
        }
    }

    pub fn state_features(&self, raw: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((raw.nrows(), self.env.state_feature_dim()));
        for (src, mut dst) in raw.rows().into_iter().zip(out.rows_mut()) {
            self.env.state_features(
                src.as_slice().expect("row"),
                dst.as_slice_mut().expect("row"),
            )?;
        }
        Ok(out)
    }

    pub fn action_features(&self, raw: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((raw.nrows(), self.env.action_feature_dim()));
        for (src, mut dst) in raw.rows().into_iter().zip(out.rows_mut()) {
            self.env.action_features(
                src.as_slice().expect("row"),
                dst.as_slice_mut().expect("row"),
            )?;
        }
        Ok(out)
    }

    /// `[state features, action features]` rows.
    pub fn cond(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(hstack(
            self.state_features(states)?.view(),
            self.action_features(actions)?.view(),
        ))
    }

    /// Noise-free Q used for greedy discrete actions: the distilled critic, or
    /// the ensemble mean (`target` selects the EMA networks).
    fn greedy_q(&self, cond: ArrayView2<f64>, target: bool) -> Result<Vec<f64>> {
        match &self.critic {
            Critic::Floq { distill, .. } => distill.predict(cond),
            Critic::Monolithic { ensemble, .. } if target => ensemble.predict_target(cond),
            Critic::Monolithic { ensemble, .. } => ensemble.predict(cond),
        }
    }

    /// Greedy action index per state feature row.
    fn greedy_actions(&self, state_feats: ArrayView2<f64>, target: bool) -> Result<Vec<usize>> {
        let (n, na) = (state_feats.nrows(), self.env.action_feature_dim());
        let mut cond = Array2::zeros((n * na, state_feats.ncols() + na));
        for i in 0..n {
            for a in 0..na {
                let mut row = cond.row_mut(i * na + a);
                row.slice_mut(s![..state_feats.ncols()])
                    .assign(&state_feats.row(i));
                row[state_feats.ncols() + a] = 1.0;
            }
        }
        let q = self.greedy_q(cond.view(), target)?;
        Ok(q.chunks(na)
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    /// Deterministic-greedy (discrete) or one-step-policy (continuous) actions in
    /// raw form for a batch of raw states.
    pub fn act(&self, states: ArrayView2<f64>, rng: &mut impl Rng) -> Result<Array2<f64>> {
        let feats = self.state_features(states)?;
        match &self.actor {
            None => {
                let greedy = self.greedy_actions(feats.view(), false)?;
                Ok(Array2::from_shape_fn((states.nrows(), 1), |(i, _)| {
                    greedy[i] as f64
                }))
            }
            Some(actor) => actor.one_step.sample(feats.view(), rng),
        }
    }

    /// Exploratory action for online interaction: epsilon-greedy for discrete
    /// actions, additive clipped Gaussian noise for continuous ones.
    pub fn explore(&self, state: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
        let row = ArrayView2::from_shape((1, state.len()), state).expect("row");
        match &self.actor {
            None => {
                if rng.random::<f64>() < self.config.online.epsilon {
                    Ok(self.env.random_action(rng))
                } else {
                    Ok(self.act(row, rng)?.row(0).to_vec())
                }
            }
            Some(actor) => {
                let a = self.act(row, rng)?;
                let bounds = actor.one_step.bounds;
                let std = self.config.online.noise * bounds.width();
                let normal = Normal::new(0.0, std.max(0.0))
                    .map_err(|e| Error::InvalidParameter(e.to_string()))?;
                Ok(a.row(0)
                    .iter()
                    .map(|x| {
                        (x + if std > 0.0 { normal.sample(rng) } else { 0.0 })
                            .clamp(bounds.low, bounds.high)
                    })
                    .collect())
            }
        }
    }

    /// Target actions `a'` (as features) at raw next states.
    fn target_action_features(&mut self, next_feats: ArrayView2<f64>) -> Result<Array2<f64>> {
        match &self.actor {
            None => {
                let greedy = self.greedy_actions(next_feats, true)?;
                let na = self.env.action_feature_dim();
                let mut out = Array2::zeros((greedy.len(), na));
                for (i, a) in greedy.into_iter().enumerate() {
                    out[[i, a]] = 1.0;
                }
                Ok(out)
            }
            Some(actor) => match self.config.actor.target {
                TargetActor::OneStep => actor
                    .one_step
                    .sample(next_feats, &mut self.streams.target_action),
                TargetActor::Bc => actor.bc.sample(next_feats, &mut self.streams.target_action),
            },
        }
    }

    fn log(&mut self, stage: Stage) {
        if let Some(log) = &mut self.stage_log {
            log.push(stage);
        }
    }

    /// One gradient step of every component on `batch` (raw form).
    pub fn update(&mut self, batch: &Batch) -> Result<StepLosses> {
        let step = self.steps_done + 1;
        let s_feat = self.state_features(batch.states.view())?;
        let a_feat = self.action_features(batch.actions.view())?;
        let ns_feat = self.state_features(batch.next_states.view())?;
        let cond = hstack(s_feat.view(), a_feat.view());
        let next_a = self.target_action_features(ns_feat.view())?;
        let next_cond = hstack(ns_feat.view(), next_a.view());
        let gamma = self.env.gamma();

        let critic_loss = match &mut self.critic {
            Critic::Floq {
                cfg, fields, opts, ..
            } => {
                let targets: Vec<_> = fields.iter().map(|f| f.target()).collect();
                let target_refs: Vec<&dyn Velocity> =
                    targets.iter().map(|t| t as &dyn Velocity).collect();
                let y = bootstrap_targets(
                    &target_refs,
                    &batch.rewards,
                    &batch.terminals,
                    next_cond.view(),
                    cfg,
                    &mut self.streams.critic,
                )
                .map_err(nonfinite_context(step, "bootstrap targets"))?;
                let mut total = 0.0;
                for (field, opt) in fields.iter_mut().zip(opts.iter_mut()) {
                    let g = floq_loss(field, cond.view(), &y, cfg, &mut self.streams.critic)
                        .map_err(nonfinite_context(step, "critic loss"))?;
                    opt.step(field.online_net_mut().params_mut(), &g.grads)
                        .map_err(nonfinite_context(step, "critic loss"))?;
                    total += g.loss;
                }
                total / fields.len() as f64
            }
            Critic::Monolithic { ensemble, opts } => {
                let y = monolithic_targets(
                    ensemble,
                    &batch.rewards,
                    &batch.terminals,
                    next_cond.view(),
                    gamma,
                )
                .map_err(nonfinite_context(step, "TD targets"))?;
                let (loss, grads) = monolithic_td_loss(ensemble, cond.view(), &y)
                    .map_err(nonfinite_context(step, "critic loss"))?;
                for ((member, opt), g) in
                    ensemble.members.iter_mut().zip(opts.iter_mut()).zip(grads)
                {
                    opt.step(member.net.params_mut(), &g.grads)
                        .map_err(nonfinite_context(step, "critic loss"))?;
                }
                loss
            }
        };
        self.log(Stage::Critic);

        let distill_value = match &mut self.critic {
            Critic::Floq {
                cfg,
                fields,
                distill,
                distill_opt,
                ..
            } => {
                let g = distill_loss(
                    distill,
                    &fields[0].online(),
                    cond.view(),
                    cfg.noise,
                    cfg.distill_steps,
                    1,
                    &mut self.streams.distill,
                )
                .map_err(nonfinite_context(step, "distill loss"))?;
                distill_opt
                    .step(distill.net_mut().params_mut(), &g.grads)
                    .map_err(nonfinite_context(step, "distill loss"))?;
                Some(g.loss)
            }
            Critic::Monolithic { .. } => None,
        };
        if distill_value.is_some() {
            self.log(Stage::Distill);
        }

        let (mut bc_value, mut actor_value) = (None, None);
        if let Some(actor) = &mut self.actor {
            let g = bc_flow_loss(
                &actor.bc,
                s_feat.view(),
                a_feat.view(),
                &mut self.streams.bc,
            )
            .map_err(nonfinite_context(step, "BC flow loss"))?;
            actor
                .bc_opt
                .step(actor.bc.net.params_mut(), &g.grads)
                .map_err(nonfinite_context(step, "BC flow loss"))?;
            bc_value = Some(g.loss);
            if let Some(log) = &mut self.stage_log {
                log.push(Stage::BcPolicy);
            }

            let critic: &dyn ActionCritic = match &self.critic {
                Critic::Floq { distill, .. } => distill,
                Critic::Monolithic { ensemble, .. } => ensemble,
            };
            let g = one_step_policy_loss(
                &actor.one_step,
                &actor.bc,
                critic,
                s_feat.view(),
                self.config.actor.alpha,
                &mut self.streams.actor,
            )
            .map_err(nonfinite_context(step, "one-step policy loss"))?;
            actor
                .one_step_opt
                .step(actor.one_step.net.params_mut(), &g.grads)
                .map_err(nonfinite_context(step, "one-step policy loss"))?;
            actor_value = Some(g.loss);
            if let Some(log) = &mut self.stage_log {
                log.push(Stage::OneStepPolicy);
            }
        }

        match &mut self.critic {
            Critic::Floq { fields, .. } => {
                for f in fields.iter_mut() {
                    f.update_target()?;
                }
            }
            Critic::Monolithic { ensemble, .. } => ensemble.update_targets()?,
        }
        self.log(Stage::Ema);
        self.steps_done = step;
        Ok(StepLosses {
            critic: critic_loss,
            distill: distill_value,
            bc: bc_value,
            actor: actor_value,
        })
    }

    /// Deployed Q estimates for `[s, a]` feature rows: the noise-averaged flow
    /// integral of the (first) online field, or the ensemble mean.
    pub fn q_values(&self, cond: ArrayView2<f64>, rng: &mut impl Rng) -> Result<Vec<f64>> {
        match &self.critic {
            Critic::Floq { cfg, fields, .. } => q_value(
                &fields[0].online(),
                cond,
                cfg.noise,
                cfg.integration_steps(),
                self.config.critic.eval_noise,
                rng,
            ),
            Critic::Monolithic { ensemble, .. } => ensemble.predict(cond),
        }
    }

    /// Flow curvature over `[s, a]` feature rows; `None` for monolithic critics.
    pub fn curvature(&self, cond: ArrayView2<f64>, rng: &mut impl Rng) -> Result<Option<f64>> {
        match &self.critic {
            Critic::Floq { cfg, fields, .. } => Ok(Some(curvature(
                &fields[0].online(),
                cond,
                cfg.noise,
                cfg.flow_steps.max(2),
                self.config.critic.eval_noise,
                rng,
            )?)),
            Critic::Monolithic { .. } => Ok(None),
        }
    }

    /// Writes networks (`*.net`), the configuration and a JSON sidecar to `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.config.save(&dir.join("config.txt"))?;
        let sidecar = match &self.critic {
            Critic::Floq {
                cfg,
                fields,
                distill,
                ..
            } => {
                for (i, f) in fields.iter().enumerate() {
                    save_network(
                        f.online_net(),
                        &dir.join(format!("critic-{i}.net")),
                        Some("critic"),
                    )?;
                    save_network(
                        f.target_net(),
                        &dir.join(format!("critic-{i}.target.net")),
                        Some("critic-target"),
                    )?;
                }
                save_network(
                    distill.net(),
                    &dir.join("distill.net"),
                    Some("distill-critic"),
                )?;
                Sidecar {
                    format: SIDECAR_FORMAT.into(),
                    kind: "floq".into(),
                    members: fields.len(),
                    steps_done: self.steps_done,
                    flow: Some(cfg.clone()),
                }
            }
            Critic::Monolithic { ensemble, .. } => {
                let targets = ensemble.target_nets();
                for (i, m) in ensemble.members.iter().enumerate() {
                    save_network(&m.net, &dir.join(format!("critic-{i}.net")), Some("critic"))?;
                    save_network(
                        targets[i],
                        &dir.join(format!("critic-{i}.target.net")),
                        Some("critic-target"),
                    )?;
                }
                Sidecar {
                    format: SIDECAR_FORMAT.into(),
                    kind: "monolithic".into(),
                    members: ensemble.len(),
                    steps_done: self.steps_done,
                    flow: None,
                }
            }
        };
        let json =
            serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Config(e.to_string()))?;
        let path = dir.join("critic.json");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        if let Some(actor) = &self.actor {
            save_network(&actor.bc.net, &dir.join("bc-policy.net"), Some("bc-policy"))?;
            save_network(
                &actor.one_step.net,
                &dir.join("one-step-policy.net"),
                Some("one-step-policy"),
            )?;
        }
        Ok(())
    }

    /// Restores an agent written by [`Agent::save`]. Optimizer moments restart
    /// from zero; the configuration file in `dir` is authoritative.
    pub fn load(dir: &Path) -> Result<Self> {
        let config = ExperimentConfig::parse_text(
            &fs::read_to_string(dir.join("config.txt"))
                .map_err(|e| Error::io(dir.join("config.txt"), e))?,
        )?;
        Self::load_with(dir, &config)
    }

    /// Like [`Agent::load`] but with an explicit configuration (e.g. one with
    /// command-line overrides applied). Network shapes must still match.
    pub fn load_with(dir: &Path, config: &ExperimentConfig) -> Result<Self> {
        let path = dir.join("critic.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| {
            Error::format(
                &path,
                e.line(),
                crate::error::FormatErrorKind::BadHeader,
                e.to_string(),
            )
        })?;
        if sidecar.format != SIDECAR_FORMAT {
            return Err(Error::format(
                &path,
                1,
                crate::error::FormatErrorKind::BadMagic,
                "unknown sidecar format",
            ));
        }
        let env = config.env.build()?;
        let range = sidecar.flow.as_ref().map(|f| f.value_range);
        let bounds = match range {
            Some(r) => (r.q_min * (1.0 - env.gamma()), r.q_max * (1.0 - env.gamma())),
            None => env.reward_bounds(),
        };
        let mut agent = Self::new(config, env, bounds)?;
        let load_checked = |name: &str, like: &Mlp| -> Result<Mlp> {
            let (net, _) = load_network(&dir.join(name))?;
            if net.sizes() != like.sizes() {
                return Err(Error::Config(format!(
                    "checkpoint {name} has layer sizes {:?}, configuration expects {:?}",
                    net.sizes(),
                    like.sizes()
                )));
            }
            Ok(net)
        };
        match &mut agent.critic {
            Critic::Floq {
                cfg,
                fields,
                distill,
                ..
            } => {
                let saved = sidecar.flow.ok_or_else(|| {
                    Error::Config(
                        "checkpoint holds a monolithic critic, configuration asks for floq".into(),
                    )
                })?;
                if sidecar.members != fields.len() {
                    return Err(Error::Config(
                        "checkpoint and configuration disagree on clipped double Q".into(),
                    ));
                }
                *cfg = saved;
                for (i, f) in fields.iter_mut().enumerate() {
                    let online = load_checked(&format!("critic-{i}.net"), f.online_net())?;
                    let target = load_checked(&format!("critic-{i}.target.net"), f.target_net())?;
                    // The saved encoding is authoritative; bounds recovered from
                    // the value range can differ in the last ulp.
                    let layout = FieldLayout {
                        interpolant: cfg.interpolant.clone(),
                        time: cfg.time.clone(),
                        ..f.layout().clone()
                    };
                    *f = VelocityField::from_parts(layout, online, target, cfg.tau)?;
                }
                *distill.net_mut() = load_checked("distill.net", distill.net())?;
            }
            Critic::Monolithic { ensemble, .. } => {
                if sidecar.kind != "monolithic" || sidecar.members != ensemble.len() {
                    return Err(Error::Config(
                        "checkpoint critic does not match the configuration".into(),
                    ));
                }
                let mut members = Vec::new();
                let mut targets = Vec::new();
                for (i, m) in ensemble.members.iter().enumerate() {
                    members.push(MonolithicCritic::from_net(load_checked(
                        &format!("critic-{i}.net"),
                        &m.net,
                    )?)?);
                    targets.push(load_checked(&format!("critic-{i}.target.net"), &m.net)?);
                }
                *ensemble = CriticEnsemble::from_parts(members, targets, config.critic.tau)?;
            }
        }
        if let Some(actor) = &mut agent.actor {
            actor.bc.net = load_checked("bc-policy.net", &actor.bc.net)?;
            actor.one_step.net = load_checked("one-step-policy.net", &actor.one_step.net)?;
        }
        agent.steps_done = sidecar.steps_done;
        Ok(agent)
    }
}
