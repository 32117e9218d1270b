//! Experiment configuration, the training loop, evaluation, ablations and
//! metrics output.

mod agent;
mod config;
mod metrics;
mod run;

pub use agent::{Actor, Agent, Critic, Stage, StepLosses};
pub use config::{
    ActorSettings, CriticKind, CriticSettings, DatasetSettings, ExperimentConfig, InterpolantKind,
    OnlineSettings, OptimSettings, TargetActor, TimeKind,
};
pub use metrics::{read_metrics, write_metrics, MetricsRow, TrainingMetrics, METRICS_MAGIC};
pub use run::{
    ablate, evaluate, evaluate_agent, finetune_online, initial_coverage, load_or_generate_dataset,
    train_offline, write_ablation, AblationAxis, AblationRow, EvalReport, FinetuneOutcome,
    TrainOutcome, SEEDS,
};
