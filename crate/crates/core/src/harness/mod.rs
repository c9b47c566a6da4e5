//! Experiment harness: learning runs, batch-size studies, policy evaluation
//! and rollout replay, with their CSV/JSON artifacts.

mod config;
mod eval;
mod study;

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ereps::{policy_update_with, EpisodeBatch, UpdateDiagnostics};
use crate::error::{Error, Result};
use crate::policy::GaussianPolicy;

pub use config::{
    BenchmarkConfig, ErepsConfig, EvaluationConfig, ExperimentConfig, ExplorationStd, InitialPolicy,
    ObjectiveSelector, Problem,
};
pub use eval::{evaluate_policy, replay, EvalReport};
pub use study::{run_batch_study, StudyCell, StudyReport, StudySummary};

/// Environment variable consulted when the config leaves `workers` unset.
pub const WORKERS_ENV: &str = "JUGGLER_WORKERS";

/// RNG for one rollout. Keyed on (master, episode, rollout) so the sample does
/// not depend on which worker draws it or in what order.
pub fn rollout_rng(master: u64, episode: u64, rollout: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&episode.to_le_bytes());
    seed[16..24].copy_from_slice(&rollout.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

pub fn resolve_workers(config: &ExperimentConfig) -> Result<usize> {
    if let Some(n) = config.workers {
        return Ok(n);
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("{WORKERS_ENV}='{v}' is not a positive integer"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub(crate) fn thread_pool(config: &ExperimentConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(resolve_workers(config)?)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    /// 1-based; the policy after this row's update is `policy_ep{episode}.json`.
    pub episode: usize,
    #[serde(flatten)]
    pub update: UpdateDiagnostics,
    pub mean_reward: f64,
    pub min_reward: f64,
    pub max_reward: f64,
    /// Rollouts that reached the objective's ceiling (the duration cap in the simulator).
    pub hits: usize,
    /// Distance of the updated mean from the optimum; benchmarks only.
    pub mean_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRow {
    pub episode: usize,
    pub rollout: usize,
    pub reward: f64,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub episode: usize,
    pub policy: GaussianPolicy,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub slot_names: Vec<String>,
    pub episodes: Vec<EpisodeRow>,
    pub rollouts: Vec<RolloutRow>,
    pub initial_policy: GaussianPolicy,
    pub final_policy: GaussianPolicy,
}

pub fn checkpoint_path(dir: &Path, episode: usize) -> std::path::PathBuf {
    dir.join(format!("policy_ep{episode}.json"))
}

/// Runs eREPS for `config.episodes` episodes. With `out`, writes `run.json`
/// up front, a checkpoint after every update and the CSV logs at the end; on a
/// fatal error the logs written so far and the last checkpoint are kept.
pub fn run_learning(config: &ExperimentConfig, out: Option<&Path>) -> Result<RunReport> {
    let problem = Problem::from_config(config)?;
    let pool = thread_pool(config)?;
    let initial = problem.initial_policy(config)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("run.json"), config.to_json()?)?;
        Checkpoint { episode: 0, policy: initial.clone() }.save(&checkpoint_path(dir, 0))?;
    }

    let mut report = RunReport {
        config: config.clone(),
        slot_names: problem.slot_names(),
        episodes: Vec::with_capacity(config.episodes),
        rollouts: Vec::with_capacity(config.episodes * config.rollouts),
        initial_policy: initial.clone(),
        final_policy: initial,
    };
    let outcome = learning_loop(config, &problem, &pool, &mut report, out);
    if let Some(dir) = out {
        write_logs(&report, dir)?;
    }
    outcome.map(|()| report)
}

fn learning_loop(
    config: &ExperimentConfig,
    problem: &Problem,
    pool: &rayon::ThreadPool,
    report: &mut RunReport,
    out: Option<&Path>,
) -> Result<()> {
    let hit = problem.hit_threshold();
    for episode in 1..=config.episodes {
        let policy = &report.final_policy;
        let results: Vec<Result<_>> = pool.install(|| {
            (0..config.rollouts)
                .into_par_iter()
                .map(|r| {
                    let mut rng = rollout_rng(config.seed, episode as u64, r as u64);
                    let theta = policy.sample_one(&mut rng);
                    let reward = problem.evaluate(&theta)?;
                    Ok((theta, reward))
                })
                .collect()
        });
        let (samples, rewards): (Vec<_>, Vec<_>) = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();

        for (r, (theta, reward)) in samples.iter().zip(&rewards).enumerate() {
            report.rollouts.push(RolloutRow {
                episode,
                rollout: r,
                reward: *reward,
                theta: theta.iter().copied().collect(),
            });
        }
        let batch = EpisodeBatch::new(samples, rewards.clone())?;
        let (next, update) = policy_update_with(&batch, policy, config.ereps.epsilon, config.ereps.covariance)?;

        let n = rewards.len() as f64;
        report.episodes.push(EpisodeRow {
            episode,
            update,
            mean_reward: rewards.iter().sum::<f64>() / n,
            min_reward: rewards.iter().copied().fold(f64::INFINITY, f64::min),
            max_reward: rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            hits: rewards.iter().filter(|&&r| r >= hit).count(),
            mean_distance: match problem {
                Problem::Benchmark(obj) => Some(obj.distance(next.mean())),
                Problem::Sim { .. } => None,
            },
        });
        if let Some(dir) = out {
            Checkpoint { episode, policy: next.clone() }.save(&checkpoint_path(dir, episode))?;
        }
        report.final_policy = next;
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_logs(report: &RunReport, dir: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("episodes.csv")).map_err(csv_error)?;
    w.write_record([
        "episode",
        "eta_star",
        "xi_star",
        "kl_parametric",
        "kl_sample_weights",
        "ess",
        "degenerate",
        "mean_reward",
        "min_reward",
        "max_reward",
        "hits",
        "mean_distance",
    ])
    .map_err(csv_error)?;
    for row in &report.episodes {
        let u = &row.update;
        w.write_record([
            row.episode.to_string(),
            opt(u.eta_star),
            u.xi_star.to_string(),
            u.kl_parametric.to_string(),
            u.kl_sample_weights.to_string(),
            u.effective_sample_size.to_string(),
            u.degenerate.to_string(),
            row.mean_reward.to_string(),
            row.min_reward.to_string(),
            row.max_reward.to_string(),
            row.hits.to_string(),
            opt(row.mean_distance),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("rollouts.csv")).map_err(csv_error)?;
    let mut header = vec!["episode".to_string(), "rollout".into(), "reward".into()];
    header.extend(report.slot_names.iter().map(|s| format!("theta_{s}")));
    w.write_record(&header).map_err(csv_error)?;
    for row in &report.rollouts {
        let mut rec = vec![row.episode.to_string(), row.rollout.to_string(), row.reward.to_string()];
        rec.extend(row.theta.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Argument(format!("csv: {other:?}")),
    }
}

/// Reads θ for one logged rollout back out of `rollouts.csv`.
pub fn load_logged_theta(path: &Path, episode: usize, rollout: usize) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_error)?;
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let field = |i: usize| record.get(i).unwrap_or_default();
        if field(0).parse::<usize>().ok() == Some(episode) && field(1).parse::<usize>().ok() == Some(rollout) {
            return record
                .iter()
                .skip(3)
                .map(|v| v.parse::<f64>().map_err(|e| Error::Argument(format!("bad theta entry '{v}': {e}"))))
                .collect();
        }
    }
    Err(Error::Argument(format!(
        "no rollout {rollout} of episode {episode} in {}",
        path.display()
    )))
}
