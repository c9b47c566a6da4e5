//! Episodic relative entropy policy search on via-point spline policies,
//! driving a planar two-ball toss-juggling simulator under a binary reward.

pub mod benchmarks;
pub mod ereps;
pub mod error;
pub mod harness;
pub mod policy;
pub mod sim;
pub mod spline;

pub use error::{Error, Result};
pub use policy::{GaussianPolicy, ParameterVector};
