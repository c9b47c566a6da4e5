use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::benchmarks::{ObjectiveKind, SyntheticObjective};
use crate::ereps::CovarianceMode;
use crate::error::{Error, Result};
use crate::policy::GaussianPolicy;
use crate::sim::{default_mask_spec, rollout, seed_via_points, SimConfig};
use crate::spline::{ConstraintMask, MaskSpec, ViaPoint};

/// One experiment, serialized as a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every rollout stream is derived from it.
    pub seed: u64,
    pub episodes: usize,
    /// Rollouts per episode (N).
    pub rollouts: usize,
    pub ereps: ErepsConfig,
    pub objective: ObjectiveSelector,
    pub policy: InitialPolicy,
    pub sim: SimConfig,
    pub benchmark: BenchmarkConfig,
    pub evaluation: EvaluationConfig,
    /// Parallel rollout workers; falls back to `JUGGLER_WORKERS`, then the core count.
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            episodes: 20,
            rollouts: 25,
            ereps: ErepsConfig::default(),
            objective: ObjectiveSelector::Sim,
            policy: InitialPolicy::default(),
            sim: SimConfig::default(),
            benchmark: BenchmarkConfig::default(),
            evaluation: EvaluationConfig::default(),
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErepsConfig {
    /// KL bound per update.
    pub epsilon: f64,
    pub covariance: CovarianceMode,
}

impl Default for ErepsConfig {
    fn default() -> Self {
        Self {
            epsilon: 2.0,
            covariance: CovarianceMode::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveSelector {
    Sim,
    Benchmark,
}

/// Starting policy for the simulator: a seed plan, which slots are searched,
/// and the exploration width per slot kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialPolicy {
    pub via_points: Vec<ViaPoint>,
    pub mask: MaskSpec,
    pub std: ExplorationStd,
}

impl Default for InitialPolicy {
    fn default() -> Self {
        Self {
            via_points: seed_via_points(),
            mask: default_mask_spec(),
            std: ExplorationStd::default(),
        }
    }
}

/// Initial standard deviations (rad, rad/s, s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplorationStd {
    pub position: f64,
    pub velocity: f64,
    pub duration: f64,
}

impl Default for ExplorationStd {
    fn default() -> Self {
        Self {
            position: 0.05,
            velocity: 0.2,
            duration: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub kind: ObjectiveKind,
    pub dim: usize,
    /// Defaults to the origin (all ones for Rosenbrock).
    pub optimum: Option<Vec<f64>>,
    pub radius: f64,
    /// The initial mean sits this far from the optimum along the diagonal.
    pub start_distance: f64,
    /// Σ₀ = initial_std² · I.
    pub initial_std: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            kind: ObjectiveKind::Sphere,
            dim: 10,
            optimum: None,
            radius: 1.0,
            start_distance: 5.0,
            initial_std: 1.0,
        }
    }
}

impl BenchmarkConfig {
    pub fn objective(&self) -> Result<SyntheticObjective> {
        let optimum = match &self.optimum {
            Some(o) => o.clone(),
            None if self.kind == ObjectiveKind::Rosenbrock => vec![1.0; self.dim],
            None => vec![0.0; self.dim],
        };
        if optimum.len() != self.dim {
            return Err(Error::Config(format!(
                "benchmark.optimum has {} entries, benchmark.dim is {}",
                optimum.len(),
                self.dim
            )));
        }
        SyntheticObjective::new(self.kind, optimum, self.radius)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub repetitions: usize,
    pub max_duration: f64,
    /// σ of the per-repetition launcher x perturbation (m).
    pub launcher_jitter: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            repetitions: 30,
            max_duration: 120.0,
            launcher_jitter: 0.0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes < 1 {
            return Err(Error::Config("episodes must be at least 1".into()));
        }
        if self.rollouts < 2 {
            return Err(Error::Config("rollouts per episode must be at least 2".into()));
        }
        if !(self.ereps.epsilon > 0.0) || !self.ereps.epsilon.is_finite() {
            return Err(Error::Config("ereps.epsilon must be positive and finite".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let e = &self.evaluation;
        if e.repetitions < 1 {
            return Err(Error::Config("evaluation.repetitions must be at least 1".into()));
        }
        if !(e.max_duration > 0.0) || !(e.launcher_jitter >= 0.0) {
            return Err(Error::Config(
                "evaluation.max_duration must be positive and launcher_jitter nonnegative".into(),
            ));
        }
        match self.objective {
            ObjectiveSelector::Sim => {
                self.sim.validate()?;
                let s = &self.policy.std;
                if [s.position, s.velocity, s.duration].iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                    return Err(Error::Config("policy.std entries must be positive".into()));
                }
                self.mask()?;
            }
            ObjectiveSelector::Benchmark => {
                let b = &self.benchmark;
                if b.dim < 1 || !(b.initial_std > 0.0) || !b.start_distance.is_finite() {
                    return Err(Error::Config(
                        "benchmark needs dim ≥ 1, initial_std > 0 and a finite start_distance".into(),
                    ));
                }
                b.objective()?;
            }
        }
        Ok(())
    }

    pub fn mask(&self) -> Result<ConstraintMask> {
        ConstraintMask::from_spec(&self.policy.via_points, &self.policy.mask)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Applies `key.path=value` overrides. Values parse as JSON, falling back
    /// to a plain string; the key must already exist in the document.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for item in overrides {
            let item = item.as_ref();
            let (path, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{item}' is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, path, value)?;
        }
        Ok(serde_json::from_value(doc)?)
    }
}

fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut node = doc;
    for key in path.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(key),
            Value::Array(items) => key.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| Error::Config(format!("unknown config key '{path}'")))?;
    }
    *node = value;
    Ok(())
}

/// The objective an experiment optimizes, resolved from its config.
#[derive(Debug, Clone)]
pub enum Problem {
    Sim { mask: ConstraintMask, config: SimConfig },
    Benchmark(SyntheticObjective),
}

impl Problem {
    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        Ok(match config.objective {
            ObjectiveSelector::Sim => Problem::Sim {
                mask: config.mask()?,
                config: config.sim.clone(),
            },
            ObjectiveSelector::Benchmark => Problem::Benchmark(config.benchmark.objective()?),
        })
    }

    pub fn initial_policy(&self, config: &ExperimentConfig) -> Result<GaussianPolicy> {
        match self {
            Problem::Sim { mask, .. } => {
                let mean = mask.extract(&config.policy.via_points)?;
                let s = &config.policy.std;
                let std: Vec<f64> = mask
                    .free_slot_names()
                    .iter()
                    .map(|name| {
                        let slot = name.rsplit('.').next().unwrap_or_default();
                        if slot.starts_with("qdot") {
                            s.velocity
                        } else if slot == "t" {
                            s.duration
                        } else {
                            s.position
                        }
                    })
                    .collect();
                GaussianPolicy::from_std(mean, &std)
            }
            Problem::Benchmark(obj) => {
                let b = &config.benchmark;
                let step = b.start_distance / (obj.dim() as f64).sqrt();
                let mean = DVector::from_iterator(obj.dim(), obj.optimum.iter().map(|o| o + step));
                GaussianPolicy::from_std(mean, &vec![b.initial_std; obj.dim()])
            }
        }
    }

    pub fn evaluate(&self, theta: &DVector<f64>) -> Result<f64> {
        match self {
            Problem::Sim { mask, config } => Ok(rollout(theta, mask, config)?.reward),
            Problem::Benchmark(obj) => obj.evaluate(theta),
        }
    }

    /// Reward at or above which a rollout counts as a hit: the duration cap
    /// for the simulator, the optimum value for benchmarks.
    pub fn hit_threshold(&self) -> f64 {
        match self {
            Problem::Sim { config, .. } => config.max_steps() as f64 * config.dt - 0.5 * config.dt,
            Problem::Benchmark(obj) => match obj.kind {
                ObjectiveKind::BinaryBall => 1.0,
                _ => 0.0,
            },
        }
    }

    pub fn slot_names(&self) -> Vec<String> {
        match self {
            Problem::Sim { mask, .. } => mask.free_slot_names(),
            Problem::Benchmark(obj) => (0..obj.dim()).map(|i| format!("x{i}")).collect(),
        }
    }
}
