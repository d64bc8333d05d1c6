//! Pre-experiment mean-squared-error prediction for Kalman filters running on
//! switching linear dynamic systems (SLDS).
//!
//! Given a fully specified SLDS and an assumed per-step mode-detection rate,
//! the crate computes the transient error moments of
//!
//! * a single-mode (possibly mismatched) Kalman filter,
//! * the "average" Kalman filter whose dynamics are the mode-probability
//!   weighted mixture of the per-mode dynamics, and
//! * a switching Kalman filter (SKF) that applies the detected mode's model,
//!
//! either by exact trajectory enumeration, by beam-pruned enumeration, or by
//! an aggregate moment recursion that is exact when the mode sequence is
//! independent across steps. Every analytic result can be cross-checked with
//! the Monte Carlo simulator in [`montecarlo`].

pub mod analysis;
pub mod enumeration;
pub mod error;
pub mod fast;
pub mod kalman;
pub mod linalg;
pub mod mismatch;
pub mod model;
pub mod montecarlo;
pub mod scenario;

pub use error::{Error, Result};
pub use mismatch::ErrorMoments;
pub use model::{
    DetectionModel, FilterKind, FilterSpec, GaussianBelief, MarkovChain, MeasurementModel,
    ModeModel, Scenario, SldsModel, Tolerances,
};

/// Scalar MSE per step, starting at step 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MseSeries {
    pub values: Vec<f64>,
}

impl MseSeries {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// MSE at step `n`.
    pub fn at(&self, n: usize) -> f64 {
        self.values[n]
    }
}
