use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EvaluationConfig, ExperimentConfig, ObjectiveSelector, Problem};
use crate::error::{Error, Result};
use crate::policy::GaussianPolicy;
use crate::sim::{rollout, rollout_with, write_trace, RolloutResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub durations: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Runs the policy mean `repetitions` times. The simulator is deterministic,
/// so repetitions differ only through the launcher x jitter, drawn from a
/// stream keyed on the master seed.
pub fn evaluate_policy(config: &ExperimentConfig, policy: &GaussianPolicy, eval: &EvaluationConfig) -> Result<EvalReport> {
    let mut config = config.clone();
    config.evaluation = eval.clone();
    config.sim.max_duration = eval.max_duration;
    let problem = Problem::from_config(&config)?;
    let theta = policy.mean();
    let durations: Vec<f64> = match &problem {
        Problem::Sim { mask, config: sim } => {
            let noise = Normal::new(0.0, eval.launcher_jitter)
                .map_err(|e| Error::Config(format!("launcher jitter: {e}")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut durations = Vec::with_capacity(eval.repetitions);
            for _ in 0..eval.repetitions {
                let mut perturbed = sim.clone();
                if eval.launcher_jitter > 0.0 {
                    perturbed.launcher.pos[0] += noise.sample(&mut rng);
                }
                durations.push(rollout(theta, mask, &perturbed)?.reward);
            }
            durations
        }
        Problem::Benchmark(obj) => vec![obj.evaluate(theta)?; eval.repetitions],
    };
    let n = durations.len() as f64;
    Ok(EvalReport {
        mean: durations.iter().sum::<f64>() / n,
        min: durations.iter().copied().fold(f64::INFINITY, f64::min),
        max: durations.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        durations,
    })
}

/// Re-simulates θ under the config's simulator and writes the trace CSV.
pub fn replay(config: &ExperimentConfig, theta: &[f64], trace_path: &Path) -> Result<RolloutResult> {
    if config.objective != ObjectiveSelector::Sim {
        return Err(Error::Config("replay needs the simulator objective".into()));
    }
    let mask = config.mask()?;
    if theta.len() != mask.free_len() {
        return Err(Error::Argument(format!(
            "theta has {} entries, the mask has {} free slots",
            theta.len(),
            mask.free_len()
        )));
    }
    let result = rollout_with(&DVector::from_column_slice(theta), &mask, &config.sim, true)?;
    let rows = result.trace.as_deref().unwrap_or_default();
    write_trace(BufWriter::new(File::create(trace_path)?), rows)?;
    Ok(result)
}
