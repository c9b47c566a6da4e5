//! Episodic relative entropy policy search.
//!
//! One update solves the temperature dual for η*, turns rewards into
//! exponential weights and refits the Gaussian by weighted maximum likelihood
//! under the reverse KL bound d_KL(π_k ‖ π_{k+1}) ≤ ε. The bound is enforced
//! through the multiplier ξ, which blends the weighted fit with the prior.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{factor_with_jitter, kl_divergence, symmetrize, GaussianPolicy, ParameterVector};

/// Search interval for the temperature η.
pub const ETA_BRACKET: (f64, f64) = (1e-8, 1e8);
/// Upper end of the search interval for ξ.
pub const XI_MAX: f64 = 1e6;
/// Eigenvalue floor applied to every updated covariance.
pub const EIGEN_FLOOR: f64 = 1e-10;

const ETA_REL_TOL: f64 = 1e-10;
const XI_MIN_POSITIVE: f64 = 1e-14;
const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Sampled parameters with their episodic rewards.
#[derive(Debug, Clone)]
pub struct EpisodeBatch {
    samples: Vec<ParameterVector>,
    rewards: Vec<f64>,
}

impl EpisodeBatch {
    pub fn new(samples: Vec<ParameterVector>, rewards: Vec<f64>) -> Result<Self> {
        if samples.len() != rewards.len() {
            return Err(Error::Argument(format!(
                "{} samples but {} rewards",
                samples.len(),
                rewards.len()
            )));
        }
        if samples.len() < 2 {
            return Err(Error::Argument("a batch needs at least two samples".into()));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::Argument("rewards must be finite".into()));
        }
        let n = samples[0].len();
        if samples.iter().any(|s| s.len() != n) {
            return Err(Error::Argument("samples differ in dimension".into()));
        }
        Ok(Self { samples, rewards })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn samples(&self) -> &[ParameterVector] {
        &self.samples
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    fn dump(&self, weights: Option<&[f64]>) -> String {
        let mut out = String::new();
        for (i, (s, r)) in self.samples.iter().zip(&self.rewards).enumerate() {
            let w = weights.map(|w| format!(" w={:e}", w[i])).unwrap_or_default();
            out.push_str(&format!("#{i} R={r}{w} theta={:?}\n", s.as_slice()));
        }
        out
    }
}

/// Per-update bookkeeping, one row of the episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    /// None when the dual was not solved (degenerate batch).
    pub eta_star: Option<f64>,
    pub xi_star: f64,
    pub kl_parametric: f64,
    pub kl_sample_weights: f64,
    pub effective_sample_size: f64,
    /// The batch carried no reward information and the policy was kept.
    pub degenerate: bool,
}

/// Outcome of the temperature dual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DualSolution {
    Optimal { eta: f64 },
    /// Every reward is equal; the dual is flat.
    Degenerate,
}

/// Covariance structure of the refitted policy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    #[default]
    Full,
    Diagonal,
}

/// g(η) = ηε + η ln[(1/N) Σ exp(R_i/η)], evaluated with the max reward shifted out.
pub fn dual_objective(rewards: &[f64], epsilon: f64, eta: f64) -> f64 {
    let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + shifted_dual(rewards, max, epsilon, eta)
}

fn shifted_dual(rewards: &[f64], max: f64, epsilon: f64, eta: f64) -> f64 {
    let n = rewards.len() as f64;
    let s: f64 = rewards.iter().map(|r| ((r - max) / eta).exp()).sum();
    eta * epsilon + eta * (s / n).ln()
}

/// KL between the weighted and the uniform sample distribution, Σ w_i ln(N w_i).
pub fn sample_kl(weights: &[f64]) -> f64 {
    let n = weights.len() as f64;
    weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| w * (n * w).ln())
        .sum()
}

/// 1 / Σ w_i².
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Softmax of R/η, shifted by the maximum reward.
pub fn compute_weights(rewards: &[f64], eta: f64) -> Vec<f64> {
    let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = rewards.iter().map(|r| ((r - max) / eta).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Minimizes the temperature dual over `ETA_BRACKET`.
///
/// Golden-section search in ln η brackets the minimizer. Because
/// g'(η) = ε − Σ w_i ln(N w_i) and the weight KL decreases in η, the estimate
/// is then refined by bisection on that root and reported from the side where
/// the weight KL is within ε.
pub fn solve_dual(rewards: &[f64], epsilon: f64) -> Result<DualSolution> {
    if rewards.len() < 2 {
        return Err(Error::Argument("the dual needs at least two rewards".into()));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Argument(format!("epsilon must be positive, got {epsilon}")));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::Argument("rewards must be finite".into()));
    }
    let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = rewards.iter().copied().fold(f64::INFINITY, f64::min);
    if max - min <= 0.0 {
        return Ok(DualSolution::Degenerate);
    }

    let g = |log_eta: f64| shifted_dual(rewards, max, epsilon, log_eta.exp());
    let (mut a, mut b) = (ETA_BRACKET.0.ln(), ETA_BRACKET.1.ln());
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    while b - a > ETA_REL_TOL {
        if gc < gd {
            b = d;
            d = c;
            gd = gc;
            c = b - GOLDEN * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + GOLDEN * (b - a);
            gd = g(d);
        }
    }
    let log_eta = 0.5 * (a + b);
    Ok(DualSolution::Optimal {
        eta: polish_eta(rewards, epsilon, log_eta),
    })
}

fn polish_eta(rewards: &[f64], epsilon: f64, log_eta: f64) -> f64 {
    let kl = |le: f64| sample_kl(&compute_weights(rewards, le.exp()));
    let (lo_bound, hi_bound) = (ETA_BRACKET.0.ln(), ETA_BRACKET.1.ln());
    if kl(lo_bound) <= epsilon {
        // greediest temperature already satisfies the bound
        return ETA_BRACKET.0;
    }
    if kl(hi_bound) > epsilon {
        return ETA_BRACKET.1;
    }
    // grow a bracket [lo, hi] around the golden-section estimate with kl(lo) > ε ≥ kl(hi)
    let mut step = 1e-9;
    let (mut lo, mut hi);
    loop {
        lo = (log_eta - step).max(lo_bound);
        hi = (log_eta + step).min(hi_bound);
        if kl(lo) > epsilon && kl(hi) <= epsilon {
            break;
        }
        step *= 10.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if kl(mid) > epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi.exp()
}

/// Candidate policy π_{k+1}(ξ) of the constrained weighted fit.
pub fn blended_fit(
    samples: &[ParameterVector],
    weights: &[f64],
    prior: &GaussianPolicy,
    xi: f64,
    mode: CovarianceMode,
) -> Result<GaussianPolicy> {
    let n = prior.dim();
    let mu_s = samples
        .iter()
        .zip(weights)
        .fold(DVector::zeros(n), |acc, (s, &w)| acc + s * w);
    let mean = (prior.mean() * xi + mu_s) / (1.0 + xi);
    let scatter = samples.iter().zip(weights).fold(DMatrix::zeros(n, n), |acc, (s, &w)| {
        let d = s - &mean;
        acc + (&d * d.transpose()) * w
    });
    let shift = &mean - prior.mean();
    let mut cov = (scatter + prior.cov() * xi + (&shift * shift.transpose()) * xi) / (1.0 + xi);
    if mode == CovarianceMode::Diagonal {
        cov = DMatrix::from_diagonal(&cov.diagonal());
    }
    GaussianPolicy::new(mean, floor_eigenvalues(cov)?)
}

/// Lifts the spectrum to at least `EIGEN_FLOOR` by a diagonal shift.
fn floor_eigenvalues(cov: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetrize(&cov);
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite covariance update", format!("{sym}")));
    }
    let min_eig = SymmetricEigen::new(sym.clone()).eigenvalues.min();
    if min_eig >= EIGEN_FLOOR {
        return Ok(sym);
    }
    let n = sym.nrows();
    let mean_diag = (sym.trace() / n as f64).max(0.0);
    let lift = EIGEN_FLOOR - min_eig + crate::policy::JITTER_RELATIVE * mean_diag;
    let lifted = &sym + DMatrix::identity(n, n) * lift;
    Ok(factor_with_jitter(&lifted)?.0)
}

/// d_KL(π_k ‖ π_{k+1}(ξ)); +∞ when the candidate cannot be formed.
pub fn kl_at_xi(
    samples: &[ParameterVector],
    weights: &[f64],
    prior: &GaussianPolicy,
    xi: f64,
    mode: CovarianceMode,
) -> f64 {
    blended_fit(samples, weights, prior, xi, mode)
        .and_then(|p| kl_divergence(prior, &p))
        .unwrap_or(f64::INFINITY)
}

/// Weighted maximum-likelihood refit under d_KL(π_k ‖ π_{k+1}) ≤ ε.
///
/// ξ* is the smallest multiplier in [0, `XI_MAX`] meeting the bound, found by
/// bisection in ln ξ; ξ* = 0 when the plain weighted fit already complies.
pub fn constrained_ml_update(
    batch: &EpisodeBatch,
    weights: &[f64],
    prior: &GaussianPolicy,
    epsilon: f64,
) -> Result<(GaussianPolicy, UpdateDiagnostics)> {
    constrained_ml_update_with(batch, weights, prior, epsilon, CovarianceMode::Full)
}

pub fn constrained_ml_update_with(
    batch: &EpisodeBatch,
    weights: &[f64],
    prior: &GaussianPolicy,
    epsilon: f64,
    mode: CovarianceMode,
) -> Result<(GaussianPolicy, UpdateDiagnostics)> {
    if weights.len() != batch.len() {
        return Err(Error::Argument(format!(
            "{} weights for a batch of {}",
            weights.len(),
            batch.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Argument("weights must be finite and nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("weights sum to {total}, not 1")));
    }
    if batch.dim() != prior.dim() {
        return Err(Error::Argument(format!(
            "batch dimension {} differs from policy dimension {}",
            batch.dim(),
            prior.dim()
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Argument(format!("epsilon must be positive, got {epsilon}")));
    }
    let samples = batch.samples();
    let kl = |xi: f64| kl_at_xi(samples, weights, prior, xi, mode);

    let xi_star = if kl(0.0) <= epsilon {
        0.0
    } else if kl(XI_MAX) > epsilon {
        return Err(Error::numeric(
            format!("KL bound {epsilon} unreachable for xi in [0, {XI_MAX}]"),
            batch.dump(Some(weights)),
        ));
    } else {
        let (mut lo, mut hi) = (XI_MIN_POSITIVE.ln(), XI_MAX.ln());
        if kl(XI_MIN_POSITIVE) <= epsilon {
            hi = lo;
        } else {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if kl(mid.exp()) > epsilon {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        hi.exp()
    };

    let policy = blended_fit(samples, weights, prior, xi_star, mode).map_err(|e| match e {
        Error::Numeric { message, diagnostics } => Error::Numeric {
            message,
            diagnostics: format!("{diagnostics}\nbatch:\n{}", batch.dump(Some(weights))),
        },
        other => other,
    })?;
    let kl_parametric = kl_divergence(prior, &policy)?;
    Ok((
        policy,
        UpdateDiagnostics {
            eta_star: None,
            xi_star,
            kl_parametric,
            kl_sample_weights: sample_kl(weights),
            effective_sample_size: effective_sample_size(weights),
            degenerate: false,
        },
    ))
}

/// Dual → weights → constrained refit. Degenerate batches leave the policy unchanged.
pub fn policy_update(
    batch: &EpisodeBatch,
    policy: &GaussianPolicy,
    epsilon: f64,
) -> Result<(GaussianPolicy, UpdateDiagnostics)> {
    policy_update_with(batch, policy, epsilon, CovarianceMode::Full)
}

pub fn policy_update_with(
    batch: &EpisodeBatch,
    policy: &GaussianPolicy,
    epsilon: f64,
    mode: CovarianceMode,
) -> Result<(GaussianPolicy, UpdateDiagnostics)> {
    match solve_dual(batch.rewards(), epsilon)? {
        DualSolution::Degenerate => {
            let n = batch.len() as f64;
            Ok((
                policy.clone(),
                UpdateDiagnostics {
                    eta_star: None,
                    xi_star: 0.0,
                    kl_parametric: 0.0,
                    kl_sample_weights: 0.0,
                    effective_sample_size: n,
                    degenerate: true,
                },
            ))
        }
        DualSolution::Optimal { eta } => {
            let weights = compute_weights(batch.rewards(), eta);
            let (next, mut diag) = constrained_ml_update_with(batch, &weights, policy, epsilon, mode)?;
            diag.eta_star = Some(eta);
            Ok((next, diag))
        }
    }
}
