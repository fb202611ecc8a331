//! Closed-form test targets on the unit square with grid-quadrature oracles.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::Result;

use super::{Forward, LikelihoodHierarchy};

/// Analytic log-likelihoods; all are bounded above by zero so they can also
/// be expressed through a Gaussian observation model.
#[derive(Clone, Debug)]
pub enum AnalyticTarget {
    /// Isotropic bump centered inside the square.
    Gaussian { center: [f64; 2], sigma: f64 },
    /// Equal-weight isotropic mixture.
    Mixture { centers: Vec<[f64; 2]>, sigma: f64 },
    /// Curved ridge along a parabola.
    Banana {
        ridge_sigma: f64,
        spread_sigma: f64,
        curvature: f64,
    },
}

impl AnalyticTarget {
    pub fn gaussian() -> AnalyticTarget {
        AnalyticTarget::Gaussian {
            center: [0.4, 0.6],
            sigma: 0.1,
        }
    }

    pub fn mixture() -> AnalyticTarget {
        AnalyticTarget::Mixture {
            centers: vec![[0.25, 0.25], [0.75, 0.75]],
            sigma: 0.1,
        }
    }

    pub fn banana() -> AnalyticTarget {
        AnalyticTarget::Banana {
            ridge_sigma: 0.05,
            spread_sigma: 0.25,
            curvature: 2.0,
        }
    }

    pub fn catalog() -> Vec<(&'static str, AnalyticTarget)> {
        vec![
            ("gaussian", Self::gaussian()),
            ("mixture", Self::mixture()),
            ("banana", Self::banana()),
        ]
    }

    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        match self {
            AnalyticTarget::Gaussian { center, sigma } => {
                let d2 = (theta[0] - center[0]).powi(2) + (theta[1] - center[1]).powi(2);
                -d2 / (2.0 * sigma * sigma)
            }
            AnalyticTarget::Mixture { centers, sigma } => {
                let inv = 1.0 / (2.0 * sigma * sigma);
                let terms: Vec<f64> = centers
                    .iter()
                    .map(|c| {
                        -((theta[0] - c[0]).powi(2) + (theta[1] - c[1]).powi(2)) * inv
                    })
                    .collect();
                let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
                max + (sum / centers.len() as f64).ln()
            }
            AnalyticTarget::Banana {
                ridge_sigma,
                spread_sigma,
                curvature,
            } => {
                let u = theta[0] - 0.5;
                let ridge = theta[1] - 0.25 - curvature * u * u;
                -ridge * ridge / (2.0 * ridge_sigma * ridge_sigma)
                    - u * u / (2.0 * spread_sigma * spread_sigma)
            }
        }
    }

    /// Tempered moments from an `n x n` midpoint grid.
    pub fn grid_moments(&self, beta: f64, n: usize) -> (Vec<f64>, DMatrix<f64>) {
        let mut mass = 0.0;
        let mut mean = [0.0; 2];
        let mut second = [[0.0; 2]; 2];
        for i in 0..n {
            let x = (i as f64 + 0.5) / n as f64;
            for j in 0..n {
                let y = (j as f64 + 0.5) / n as f64;
                let w = (beta * self.log_likelihood(&[x, y])).exp();
                mass += w;
                mean[0] += w * x;
                mean[1] += w * y;
                second[0][0] += w * x * x;
                second[0][1] += w * x * y;
                second[1][0] += w * y * x;
                second[1][1] += w * y * y;
            }
        }
        mean[0] /= mass;
        mean[1] /= mass;
        let cov = DMatrix::from_fn(2, 2, |a, b| second[a][b] / mass - mean[a] * mean[b]);
        (mean.to_vec(), cov)
    }

    /// Hierarchy whose fidelity `ℓ` widens the target by the given factor;
    /// the last factor should be 1 so the top fidelity is the target itself.
    pub fn hierarchy(&self, widenings: &[f64], sigma2: f64) -> Result<LikelihoodHierarchy> {
        let fidelities: Vec<Arc<dyn Forward>> = widenings
            .iter()
            .map(|&w| {
                Arc::new(AnalyticForward {
                    target: self.clone(),
                    widen: w,
                    sigma2,
                }) as Arc<dyn Forward>
            })
            .collect();
        LikelihoodHierarchy::new(fidelities, vec![0.0], sigma2)
    }
}

/// Scalar observation model reproducing an analytic log-likelihood exactly:
/// `G(θ) = sqrt(-2σ² L(θ)/w²)` against `y* = 0`.
pub struct AnalyticForward {
    target: AnalyticTarget,
    widen: f64,
    sigma2: f64,
}

impl AnalyticForward {
    pub fn new(target: AnalyticTarget, widen: f64, sigma2: f64) -> AnalyticForward {
        AnalyticForward {
            target,
            widen,
            sigma2,
        }
    }
}

impl Forward for AnalyticForward {
    fn dim(&self) -> usize {
        2
    }

    fn num_outputs(&self) -> usize {
        1
    }

    fn evaluate(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let ll = self.target.log_likelihood(theta) / (self.widen * self.widen);
        Ok(vec![(-2.0 * self.sigma2 * ll).max(0.0).sqrt()])
    }
}
