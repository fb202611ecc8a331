//! Forward models, likelihood hierarchies, and analytic test targets.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

pub mod analytic;
pub mod poisson;

pub use analytic::{AnalyticForward, AnalyticTarget};
pub use poisson::{solve_poisson, DiffusionProblem, PoissonField, PoissonForward};

/// A deterministic forward map `G: [0,1]^d -> R^m`.
pub trait Forward: Send + Sync {
    fn dim(&self) -> usize;
    fn num_outputs(&self) -> usize;
    fn evaluate(&self, theta: &[f64]) -> Result<Vec<f64>>;
}

/// Ordered forward models sharing one observation and noise level; fidelity
/// indices are 1-based to match run diagnostics.
pub struct LikelihoodHierarchy {
    fidelities: Vec<Arc<dyn Forward>>,
    y_star: Vec<f64>,
    sigma2: f64,
    counters: Vec<AtomicU64>,
}

impl LikelihoodHierarchy {
    pub fn new(
        fidelities: Vec<Arc<dyn Forward>>,
        y_star: Vec<f64>,
        sigma2: f64,
    ) -> Result<LikelihoodHierarchy> {
        if fidelities.is_empty() {
            return Err(Error::contract("hierarchy needs at least one fidelity"));
        }
        if !(sigma2 > 0.0) {
            return Err(Error::contract("noise variance must be positive"));
        }
        let d = fidelities[0].dim();
        for f in &fidelities {
            if f.num_outputs() != y_star.len() {
                return Err(Error::contract(
                    "forward model output size does not match the observation",
                ));
            }
            if f.dim() != d {
                return Err(Error::contract("forward models disagree on input dimension"));
            }
        }
        let counters = (0..fidelities.len()).map(|_| AtomicU64::new(0)).collect();
        Ok(LikelihoodHierarchy {
            fidelities,
            y_star,
            sigma2,
            counters,
        })
    }

    pub fn num_fidelities(&self) -> usize {
        self.fidelities.len()
    }

    pub fn dim(&self) -> usize {
        self.fidelities[0].dim()
    }

    pub fn observation(&self) -> &[f64] {
        &self.y_star
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn forward(&self, fidelity: usize) -> Result<&Arc<dyn Forward>> {
        self.fidelities
            .get(fidelity.checked_sub(1).ok_or_else(|| {
                Error::contract("fidelity indices start at 1")
            })?)
            .ok_or_else(|| {
                Error::contract(format!(
                    "fidelity {fidelity} exceeds hierarchy depth {}",
                    self.fidelities.len()
                ))
            })
    }

    /// Unnormalized Gaussian log-likelihood at the given fidelity; every call
    /// counts as one requested model evaluation.
    pub fn log_likelihood(&self, fidelity: usize, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.dim() || theta.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::contract("likelihood point outside [0,1]^d"));
        }
        let fw = self.forward(fidelity)?;
        let g = fw.evaluate(theta).map_err(|e| Error::Solver {
            fidelity,
            detail: format!("at theta {theta:?}: {e}"),
        })?;
        self.counters[fidelity - 1].fetch_add(1, Ordering::Relaxed);
        let r2: f64 = g
            .iter()
            .zip(&self.y_star)
            .map(|(gi, yi)| (gi - yi) * (gi - yi))
            .sum();
        Ok(-r2 / (2.0 * self.sigma2))
    }

    /// Requested evaluations at one fidelity since construction (or reset).
    pub fn eval_count(&self, fidelity: usize) -> u64 {
        self.counters[fidelity - 1].load(Ordering::Relaxed)
    }

    pub fn eval_counts(&self) -> Vec<u64> {
        self.counters
            .iter()
            .map(|c| c.load(Ordering::Relaxed))
            .collect()
    }

    pub fn total_evals(&self) -> u64 {
        self.counters.iter().map(|c| c.load(Ordering::Relaxed)).sum()
    }

    pub fn reset_counters(&self) {
        for c in &self.counters {
            c.store(0, Ordering::Relaxed);
        }
    }
}
