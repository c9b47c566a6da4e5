use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{csv_error, run_learning, ExperimentConfig, ObjectiveSelector, Problem};
use crate::error::{Error, Result};

/// Final deterministic-mean outcome of one (batch size, seed) learning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub batch_size: usize,
    pub seed: u64,
    pub final_reward: Option<f64>,
    pub hit: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub batch_size: usize,
    pub runs: usize,
    pub hits: usize,
    pub failures: usize,
    pub hit_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub cells: Vec<StudyCell>,
    pub summary: Vec<StudySummary>,
}

impl StudyReport {
    pub fn hit_fraction(&self, batch_size: usize) -> Option<f64> {
        self.summary.iter().find(|s| s.batch_size == batch_size).map(|s| s.hit_fraction)
    }
}

const HISTOGRAM_BINS: usize = 10;

/// Learns once per (batch size, seed) and runs each final policy mean once.
/// Seeds are `config.seed + i`. A failing cell is recorded and the study
/// carries on.
pub fn run_batch_study(
    config: &ExperimentConfig,
    batch_sizes: &[usize],
    seeds: usize,
    out: Option<&Path>,
) -> Result<StudyReport> {
    if batch_sizes.is_empty() || seeds == 0 {
        return Err(Error::Config("a study needs at least one batch size and one seed".into()));
    }
    for &n in batch_sizes {
        config.with_overrides(&[format!("rollouts={n}")])?.validate()?;
    }
    let problem = Problem::from_config(config)?;
    let hit = problem.hit_threshold();

    let mut cells = Vec::with_capacity(batch_sizes.len() * seeds);
    for &n in batch_sizes {
        for i in 0..seeds {
            let mut cell_config = config.clone();
            cell_config.rollouts = n;
            cell_config.seed = config.seed.wrapping_add(i as u64);
            let outcome = run_learning(&cell_config, None).and_then(|r| problem.evaluate(r.final_policy.mean()));
            cells.push(match outcome {
                Ok(reward) => StudyCell {
                    batch_size: n,
                    seed: cell_config.seed,
                    final_reward: Some(reward),
                    hit: reward >= hit,
                    error: None,
                },
                Err(e) => StudyCell {
                    batch_size: n,
                    seed: cell_config.seed,
                    final_reward: None,
                    hit: false,
                    error: Some(e.to_string()),
                },
            });
        }
    }

    let summary = batch_sizes
        .iter()
        .map(|&n| {
            let mine: Vec<_> = cells.iter().filter(|c| c.batch_size == n).collect();
            let hits = mine.iter().filter(|c| c.hit).count();
            StudySummary {
                batch_size: n,
                runs: mine.len(),
                hits,
                failures: mine.iter().filter(|c| c.error.is_some()).count(),
                hit_fraction: hits as f64 / mine.len() as f64,
            }
        })
        .collect();
    let report = StudyReport { cells, summary };
    if let Some(dir) = out {
        write_study(&report, config, dir)?;
    }
    Ok(report)
}

fn write_study(report: &StudyReport, config: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("run.json"), config.to_json()?)?;
    let mut w = csv::Writer::from_path(dir.join("study.csv")).map_err(csv_error)?;
    w.write_record(["batch_size", "seed", "final_reward", "hit", "error"]).map_err(csv_error)?;
    for c in &report.cells {
        w.write_record([
            c.batch_size.to_string(),
            c.seed.to_string(),
            c.final_reward.map(|r| r.to_string()).unwrap_or_default(),
            c.hit.to_string(),
            c.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;

    let rewards: Vec<f64> = report.cells.iter().filter_map(|c| c.final_reward).collect();
    let (lo, hi) = match config.objective {
        ObjectiveSelector::Sim => (0.0, config.sim.max_duration),
        ObjectiveSelector::Benchmark => (
            rewards.iter().copied().fold(f64::INFINITY, f64::min).min(0.0),
            rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(1.0),
        ),
    };
    for s in &report.summary {
        let values: Vec<f64> = report
            .cells
            .iter()
            .filter(|c| c.batch_size == s.batch_size)
            .filter_map(|c| c.final_reward)
            .collect();
        let mut w = csv::Writer::from_path(dir.join(format!("histogram_n{}.csv", s.batch_size))).map_err(csv_error)?;
        w.write_record(["bin_low", "bin_high", "count"]).map_err(csv_error)?;
        for (a, b, count) in histogram(&values, lo, hi, HISTOGRAM_BINS) {
            w.write_record([a.to_string(), b.to_string(), count.to_string()]).map_err(csv_error)?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Equal-width bins over [lo, hi]; the last bin is closed so the cap lands in it.
fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<(f64, f64, usize)> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0; bins];
    for &v in values {
        let k = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (lo + k as f64 * width, lo + (k + 1) as f64 * width, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_closes_last_bin() {
        let h = histogram(&[0.0, 0.5, 9.99, 10.0, 10.0], 0.0, 10.0, 10);
        assert_eq!(h[0].2, 2);
        assert_eq!(h[9].2, 3);
        assert_eq!(h.iter().map(|b| b.2).sum::<usize>(), 5);
    }
}
