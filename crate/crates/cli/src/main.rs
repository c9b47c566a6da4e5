use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use juggler_core::harness::{
    evaluate_policy, load_logged_theta, replay, run_batch_study, run_learning, Checkpoint, ExperimentConfig,
};

/// Episodic REPS on a planar toss-juggling simulator.
#[derive(Parser)]
#[command(name = "juggler", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one learning experiment.
    Learn {
        #[command(flatten)]
        common: Common,
        /// Output directory for run.json, CSV logs and checkpoints.
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn once per (batch size, seed) and compare final policies.
    BatchStudy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "10,25")]
        batch_sizes: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
    },
    /// Run a checkpoint's policy mean repeatedly.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        max_duration: Option<f64>,
        /// σ of the launcher x perturbation in metres.
        #[arg(long)]
        launcher_jitter: Option<f64>,
        /// Write the report as JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-simulate a logged rollout (or a checkpoint mean) and export its trace.
    Replay {
        #[command(flatten)]
        common: Common,
        /// rollouts.csv of an earlier run; needs --episode and --rollout.
        #[arg(long, conflicts_with = "checkpoint", requires_all = ["episode", "rollout"])]
        rollouts: Option<PathBuf>,
        #[arg(long)]
        episode: Option<usize>,
        #[arg(long)]
        rollout: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Trace CSV destination.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default configuration.
    DefaultConfig,
}

#[derive(Args)]
struct Common {
    /// JSON config; defaults apply to missing keys. Eval and replay fall back
    /// to the run.json next to the given checkpoint or log.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key by dotted path, e.g. `--set ereps.epsilon=1.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Parallel rollout workers (else JUGGLER_WORKERS, else all cores).
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn load(&self, sibling: Option<&Path>) -> Result<ExperimentConfig> {
        let inferred = sibling.and_then(Path::parent).map(|d| d.join("run.json")).filter(|p| p.exists());
        let base = match self.config.as_deref().or(inferred.as_deref()) {
            Some(path) => {
                ExperimentConfig::load(path).with_context(|| format!("reading config {}", path.display()))?
            }
            None => ExperimentConfig::default(),
        };
        let mut config = base.with_overrides(&self.overrides)?;
        if self.workers.is_some() {
            config.workers = self.workers;
        }
        config.validate()?;
        Ok(config)
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Learn { common, out } => {
            let config = common.load(None)?;
            let report = run_learning(&config, Some(&out))?;
            for row in &report.episodes {
                println!(
                    "episode {:>3}  mean {:>7.3}  max {:>7.3}  hits {:>3}/{}  kl {:.4}",
                    row.episode, row.mean_reward, row.max_reward, row.hits, config.rollouts, row.update.kl_parametric
                );
            }
            println!("wrote {}", out.display());
        }
        Command::BatchStudy {
            common,
            out,
            batch_sizes,
            seeds,
        } => {
            let config = common.load(None)?;
            let report = run_batch_study(&config, &batch_sizes, seeds, Some(&out))?;
            for s in &report.summary {
                println!(
                    "N = {:>3}: {}/{} final policies at the cap ({} failed)",
                    s.batch_size, s.hits, s.runs, s.failures
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Eval {
            common,
            checkpoint,
            repetitions,
            max_duration,
            launcher_jitter,
            out,
        } => {
            let config = common.load(Some(&checkpoint))?;
            let mut eval = config.evaluation.clone();
            eval.repetitions = repetitions.unwrap_or(eval.repetitions);
            eval.max_duration = max_duration.unwrap_or(eval.max_duration);
            eval.launcher_jitter = launcher_jitter.unwrap_or(eval.launcher_jitter);
            let policy = Checkpoint::load(&checkpoint)
                .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?
                .policy;
            let report = evaluate_policy(&config, &policy, &eval)?;
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => std::fs::write(&path, json)?,
                None => println!("{json}"),
            }
        }
        Command::Replay {
            common,
            rollouts,
            episode,
            rollout,
            checkpoint,
            out,
        } => {
            let (theta, config) = match (rollouts, checkpoint) {
                (Some(log), None) => {
                    let config = common.load(Some(&log))?;
                    let theta = load_logged_theta(&log, episode.unwrap_or_default(), rollout.unwrap_or_default())?;
                    (theta, config)
                }
                (None, Some(ckpt)) => {
                    let config = common.load(Some(&ckpt))?;
                    let policy = Checkpoint::load(&ckpt)?.policy;
                    (policy.mean().iter().copied().collect(), config)
                }
                _ => bail!("replay needs either --rollouts or --checkpoint"),
            };
            let result = replay(&config, &theta, &out)?;
            println!(
                "reward {} s, {} catches, trace written to {}",
                result.reward,
                result.catches,
                out.display()
            );
        }
        Command::DefaultConfig => println!("{}", ExperimentConfig::default().to_json()?),
    }
    Ok(())
}
