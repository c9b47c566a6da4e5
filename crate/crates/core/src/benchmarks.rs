//! Synthetic episodic objectives with known optima, used to check the
//! optimizer independently of the simulator.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// −‖θ − θ*‖²
    Sphere,
    /// 1 inside the closed ball of `radius` around θ*, else 0.
    BinaryBall,
    /// Negated Rosenbrock; the optimum is the all-ones vector.
    Rosenbrock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticObjective {
    pub kind: ObjectiveKind,
    pub optimum: Vec<f64>,
    #[serde(default = "default_radius")]
    pub radius: f64,
}

fn default_radius() -> f64 {
    1.0
}

impl SyntheticObjective {
    pub fn new(kind: ObjectiveKind, optimum: Vec<f64>, radius: f64) -> Result<Self> {
        let obj = Self { kind, optimum, radius };
        obj.validate()?;
        Ok(obj)
    }

    pub fn sphere(optimum: Vec<f64>) -> Self {
        Self::new(ObjectiveKind::Sphere, optimum, 1.0).expect("finite optimum")
    }

    pub fn binary_ball(optimum: Vec<f64>, radius: f64) -> Result<Self> {
        Self::new(ObjectiveKind::BinaryBall, optimum, radius)
    }

    /// Rosenbrock in `dim` dimensions.
    pub fn rosenbrock(dim: usize) -> Self {
        Self::new(ObjectiveKind::Rosenbrock, vec![1.0; dim], 1.0).expect("finite optimum")
    }

    pub fn validate(&self) -> Result<()> {
        if self.optimum.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("benchmark optimum must be finite".into()));
        }
        if self.kind == ObjectiveKind::BinaryBall && !(self.radius > 0.0) {
            return Err(Error::Config("binary ball radius must be positive".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.optimum.len()
    }

    pub fn distance(&self, theta: &DVector<f64>) -> f64 {
        theta
            .iter()
            .zip(&self.optimum)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn evaluate(&self, theta: &DVector<f64>) -> Result<f64> {
        if theta.len() != self.dim() {
            return Err(Error::Argument(format!(
                "theta has dimension {}, objective has {}",
                theta.len(),
                self.dim()
            )));
        }
        Ok(match self.kind {
            ObjectiveKind::Sphere => -self.distance(theta).powi(2),
            ObjectiveKind::BinaryBall => {
                if self.distance(theta) <= self.radius {
                    1.0
                } else {
                    0.0
                }
            }
            ObjectiveKind::Rosenbrock => -theta
                .as_slice()
                .windows(2)
                .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
                .sum::<f64>(),
        })
    }
}

/// Free-function form of [`SyntheticObjective::evaluate`].
pub fn evaluate_objective(obj: &SyntheticObjective, theta: &DVector<f64>) -> Result<f64> {
    obj.evaluate(theta)
}
