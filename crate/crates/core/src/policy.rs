//! Multivariate Gaussian search distribution over policy parameters.
//!
//! The covariance is stored symmetrized together with its Cholesky factor.
//! Every log-determinant and quadratic form goes through that factor.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Flat parameter vector θ (mixed units: rad, rad/s, s).
pub type ParameterVector = DVector<f64>;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative size of the diagonal jitter added when Cholesky fails.
pub const JITTER_RELATIVE: f64 = 1e-9;
/// Number of jitter retries before a covariance is declared unusable.
pub const JITTER_RETRIES: usize = 3;

/// N(θ; μ, Σ) with a cached lower Cholesky factor of Σ.
#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl PartialEq for GaussianPolicy {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

/// Symmetrize and factor `cov`, adding diagonal jitter on failure.
///
/// Each retry adds `1e-9 * mean(diag) * 10^k * I`; a zero diagonal uses a
/// unit scale so that collapsed covariances can still be repaired.
/// Returns the (possibly jittered) matrix and its lower factor.
pub fn factor_with_jitter(cov: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = cov.nrows();
    if n != cov.ncols() {
        return Err(Error::Argument(format!(
            "covariance must be square, got {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(
            "covariance contains non-finite entries",
            format!("{cov}"),
        ));
    }
    let mut sym = symmetrize(cov);
    if let Some(ch) = Cholesky::new(sym.clone()) {
        return Ok((sym, ch.l()));
    }
    let mean_diag = if n == 0 { 0.0 } else { sym.trace() / n as f64 };
    let scale = if mean_diag.is_finite() && mean_diag > 0.0 {
        mean_diag
    } else {
        1.0
    };
    let mut step = JITTER_RELATIVE * scale;
    for _ in 0..JITTER_RETRIES {
        for i in 0..n {
            sym[(i, i)] += step;
        }
        if let Some(ch) = Cholesky::new(sym.clone()) {
            return Ok((sym, ch.l()));
        }
        step *= 10.0;
    }
    Err(Error::numeric(
        "covariance is not positive definite after jitter",
        format!("{cov}"),
    ))
}

/// (A + Aᵀ) / 2; exact for matrices that are already symmetric.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

impl GaussianPolicy {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Argument(format!(
                "mean has dimension {} but covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("mean contains non-finite entries".into()));
        }
        let (cov, chol) = factor_with_jitter(&cov)?;
        Ok(Self { mean, cov, chol })
    }

    /// Diagonal covariance from per-coordinate standard deviations.
    pub fn from_std(mean: DVector<f64>, std: &[f64]) -> Result<Self> {
        if std.len() != mean.len() {
            return Err(Error::Argument(format!(
                "{} standard deviations for a {}-dimensional mean",
                std.len(),
                mean.len()
            )));
        }
        let diag = DVector::from_iterator(std.len(), std.iter().map(|s| s * s));
        Self::new(mean, DMatrix::from_diagonal(&diag))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower-triangular L with L Lᵀ = Σ.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Draws `count` parameter vectors as μ + L z with z ~ N(0, I).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<ParameterVector> {
        (0..count).map(|_| self.sample_one(rng)).collect()
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterVector {
        let z = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample(StandardNormal)));
        &self.mean + &self.chol * z
    }

    /// ln N(θ; μ, Σ).
    pub fn log_density(&self, theta: &DVector<f64>) -> Result<f64> {
        if theta.len() != self.dim() {
            return Err(Error::Argument(format!(
                "theta has dimension {}, policy has {}",
                theta.len(),
                self.dim()
            )));
        }
        let diff = theta - &self.mean;
        let maha = self.whiten(&diff).norm_squared();
        Ok(-0.5 * (self.dim() as f64 * LN_2PI + self.log_det() + maha))
    }

    /// L⁻¹ v.
    fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol
            .solve_lower_triangular(v)
            .expect("cholesky factor has a positive diagonal")
    }

    /// d_KL(self ‖ other) for two Gaussians of equal dimension.
    pub fn kl_divergence(&self, other: &GaussianPolicy) -> Result<f64> {
        kl_divergence(self, other)
    }
}

/// Closed-form d_KL(p ‖ q) = ½[tr(Σq⁻¹Σp) + Δμᵀ Σq⁻¹ Δμ − n + ln|Σq| − ln|Σp|].
pub fn kl_divergence(p: &GaussianPolicy, q: &GaussianPolicy) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Argument(format!(
            "KL between policies of dimension {} and {}",
            p.dim(),
            q.dim()
        )));
    }
    let n = p.dim() as f64;
    // tr(Σq⁻¹Σp) = ‖Lq⁻¹ Lp‖²_F
    let cross = q
        .chol
        .solve_lower_triangular(&p.chol)
        .ok_or_else(|| Error::numeric("singular covariance in KL", format!("{}", q.cov)))?;
    let trace = cross.norm_squared();
    let maha = q.whiten(&(&q.mean - &p.mean)).norm_squared();
    let kl = 0.5 * (trace + maha - n + q.log_det() - p.log_det());
    if !kl.is_finite() {
        return Err(Error::numeric(
            "non-finite KL divergence",
            format!("p.cov = {}\nq.cov = {}", p.cov, q.cov),
        ));
    }
    Ok(kl.max(0.0))
}

#[derive(Serialize, Deserialize)]
struct PolicyRepr {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl Serialize for GaussianPolicy {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.dim();
        PolicyRepr {
            mean: self.mean.iter().copied().collect(),
            cov: (0..n).map(|i| self.cov.row(i).iter().copied().collect()).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GaussianPolicy {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = PolicyRepr::deserialize(deserializer)?;
        let n = repr.mean.len();
        if repr.cov.len() != n || repr.cov.iter().any(|r| r.len() != n) {
            return Err(serde::de::Error::custom("covariance shape does not match mean"));
        }
        let cov = DMatrix::from_fn(n, n, |i, j| repr.cov[i][j]);
        GaussianPolicy::new(DVector::from_vec(repr.mean), cov).map_err(serde::de::Error::custom)
    }
}
