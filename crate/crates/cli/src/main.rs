//! `floq` command-line driver.
//!
//! Every subcommand builds an experiment configuration from defaults, an
//! optional `--config` file and then overrides, applied in command-line order.
//! Overrides are either `--set key=value` or a config key used as a flag
//! (`--critic.K 4`, `--seed=3`). Exit codes: 0 success, 2 configuration or
//! input error, 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use floq::envs::{generate_dataset, save_dataset, Env};
use floq::harness::{
    ablate, evaluate, finetune_online, train_offline, AblationAxis, ExperimentConfig, SEEDS,
};
use floq::oracles::{value_iteration, DEFAULT_TOLERANCE};
use floq::Error;

#[derive(Parser)]
#[command(
    name = "floq",
    version,
    about = "Flow-matching critics for offline RL on toy tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, `KEY=VALUE`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an offline dataset for the configured environment.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true)]
        keys: Vec<String>,
    },
    /// Offline training; writes metrics.csv and checkpoint/ under --out.
    Train {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true)]
        keys: Vec<String>,
    },
    /// Online fine-tuning of a checkpoint for `online.steps` steps.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true)]
        keys: Vec<String>,
    },
    /// Roll out a checkpoint's policy and report return and success rate.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true)]
        keys: Vec<String>,
    },
    /// One training run per value (and seed) of a single configuration field.
    Ablate {
        /// K, ensemble, t0-only, interpolant, sigma, time, kappa or K_distill.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Comma-separated seeds; defaults to 0,1,2.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true)]
        keys: Vec<String>,
    },
    /// Exact optimal Q table of a tabular environment as `s,a,q` CSV.
    Oracle {
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true)]
        keys: Vec<String>,
    },
}

/// Splits `--key value` / `--key=value` pairs.
fn key_overrides(args: &[String]) -> floq::Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            return Err(Error::Config(format!("unexpected argument `{arg}`")));
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::Config(format!("flag `--{flag}` needs a value")))?;
                (flag.to_string(), v.clone())
            }
        };
        out.push((key, value));
    }
    Ok(out)
}

fn resolve(
    base: Option<ExperimentConfig>,
    cfg: &ConfigArgs,
    keys: &[String],
) -> floq::Result<ExperimentConfig> {
    let mut config = match &cfg.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            ExperimentConfig::parse_text(&text)?
        }
        None => base.unwrap_or_default(),
    };
    for s in &cfg.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{s}`")))?;
        config.set(k.trim(), v)?;
    }
    for (k, v) in key_overrides(keys)? {
        config.set(&k, &v)?;
    }
    config.validate()?;
    Ok(config)
}

fn checkpoint_config(dir: &Path) -> floq::Result<ExperimentConfig> {
    let path = dir.join("config.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    ExperimentConfig::parse_text(&text)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into())
}

fn run(cli: Cli) -> floq::Result<()> {
    match cli.command {
        Command::GenData { out, cfg, keys } => {
            let config = resolve(None, &cfg, &keys)?;
            let ds = generate_dataset(
                &config.env,
                config.dataset.behavior,
                config.dataset.size,
                config.seed,
            )?;
            save_dataset(&ds, &out)?;
            println!(
                "wrote {} transitions of {} to {} (rewards in [{}, {}])",
                ds.len(),
                config.env,
                out.display(),
                ds.meta.reward_min,
                ds.meta.reward_max
            );
        }
        Command::Train { out, cfg, keys } => {
            let config = resolve(None, &cfg, &keys)?;
            let outcome = train_offline(&config, Some(&out))?;
            match outcome.metrics.last() {
                Some(last) => println!(
                    "step {}: critic loss {}, mean Q {}, oracle gap {}, return {}, success {}",
                    last.step,
                    fmt_opt(last.critic_loss),
                    fmt_opt(last.mean_q),
                    fmt_opt(last.oracle_gap),
                    fmt_opt(last.policy_score),
                    fmt_opt(last.success_rate)
                ),
                None => println!("no training steps; wrote the initial checkpoint"),
            }
            println!("outputs in {}", out.display());
        }
        Command::Finetune {
            checkpoint,
            out,
            cfg,
            keys,
        } => {
            let config = resolve(Some(checkpoint_config(&checkpoint)?), &cfg, &keys)?;
            let outcome = finetune_online(&config, &checkpoint, Some(&out))?;
            let last = outcome
                .metrics
                .last()
                .expect("finetune always evaluates the checkpoint");
            println!(
                "buffer {} -> {}; step {}: return {}, online return {}",
                outcome.buffer_before,
                outcome.buffer_after,
                last.step,
                fmt_opt(last.policy_score),
                fmt_opt(last.online_return)
            );
        }
        Command::Evaluate {
            checkpoint,
            episodes,
            cfg,
            keys,
        } => {
            let config = resolve(Some(checkpoint_config(&checkpoint)?), &cfg, &keys)?;
            let report = evaluate(&checkpoint, Some(&config), episodes)?;
            println!("mean_return,success_rate,std_err,episodes");
            println!(
                "{:.6},{:.6},{:.6},{}",
                report.mean_return, report.success_rate, report.std_err, report.episodes
            );
        }
        Command::Ablate {
            axis,
            values,
            seeds,
            out,
            cfg,
            keys,
        } => {
            let config = resolve(None, &cfg, &keys)?;
            let axis: AblationAxis = axis.parse()?;
            let seeds = if seeds.is_empty() {
                SEEDS.to_vec()
            } else {
                seeds
            };
            let rows = ablate(&config, axis, &values, &seeds, Some(&out))?;
            for row in &rows {
                let last = row.metrics.last();
                println!(
                    "{}={} seed {}: oracle gap {}, curvature {}, return {}",
                    row.axis,
                    row.value,
                    row.seed,
                    fmt_opt(last.and_then(|m| m.oracle_gap)),
                    fmt_opt(last.and_then(|m| m.curvature)),
                    fmt_opt(last.and_then(|m| m.policy_score))
                );
            }
            println!("table in {}", out.join("ablation.csv").display());
        }
        Command::Oracle { out, cfg, keys } => {
            let config = resolve(None, &cfg, &keys)?;
            let Env::Tabular(mdp) = config.env.build()? else {
                return Err(Error::Config(format!(
                    "{} has no tabular oracle",
                    config.env
                )));
            };
            let q = value_iteration(&mdp, DEFAULT_TOLERANCE)?;
            match out {
                Some(path) => {
                    q.write_csv(&path)?;
                    eprintln!("residual {:.3e}, wrote {}", q.residual, path.display());
                }
                None => print!("{}", q.to_csv()),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
