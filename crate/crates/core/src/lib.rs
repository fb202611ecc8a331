//! Gradient-free Bayesian inference on the unit hypercube.
//!
//! This crate builds monotone triangular transport-map surrogates of
//! concentrated, non-Gaussian posteriors by generalized annealing: a joint
//! schedule over likelihood fidelity and inverse temperature. Each surrogate
//! is fit by minimizing an importance-reweighted cross-entropy loss over a
//! quadrature rule assembled from several tempered stages via multiple
//! importance sampling, so expensive likelihood evaluations are recycled
//! across annealing steps.
//!
//! The main entry point is [`annealer::anneal`], which drives the full loop
//! given a [`models::LikelihoodHierarchy`] and an [`annealer::AnnealConfig`].
//! The building blocks are usable on their own:
//!
//! * [`quadrature`] — randomized quasi-Monte Carlo rules on `[0,1]^d` and
//!   effective-sample-size diagnostics;
//! * [`transport`] — monotone triangular maps, pullback densities, and
//!   sampleable [`transport::Surrogate`] densities;
//! * [`objective`] — the discretized cross-entropy loss and its optimizer;
//! * [`mis`] — multiple tempered importance-weighted quadrature;
//! * [`models`] — forward-model hierarchies, a finite-difference Poisson
//!   solver for the diffusion inversions, and analytic test targets;
//! * [`metrics`] — weighted moments, Förstner distance, and MMD.

pub mod annealer;
pub mod error;
pub mod gauss;
pub mod metrics;
pub mod mis;
pub mod models;
pub mod objective;
pub mod quadrature;
pub mod transport;

pub use error::{Error, Result};
pub use quadrature::QuadratureRule;
pub use transport::Surrogate;
