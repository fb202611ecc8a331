//! Multiple importance sampling across tempered annealing stages.
//!
//! Every annealing step leaves behind a stage memo: the points it evaluated
//! the likelihood at, the proposal they were drawn from, and the stored
//! log-likelihood values. [`mis_quadrature`] recombines any number of such
//! stages into one normalized rule targeting the tempered posterior at a
//! given inverse temperature, using the power heuristic to blend stages and
//! a single global self-normalization at the end.
//!
//! The temperature enters only through a linear term in log space, so a
//! [`MisAssembly`] precomputes everything else once and can then price many
//! candidate temperatures without touching the likelihood or the proposal
//! densities again.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;
use crate::transport::Surrogate;

/// Proposal density a stage drew its points from.
#[derive(Clone, Debug)]
pub enum Proposer {
    Uniform,
    Surrogate(Arc<Surrogate>),
}

impl Proposer {
    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        match self {
            Proposer::Uniform => {
                if theta.iter().any(|x| !(0.0..=1.0).contains(x)) {
                    Ok(f64::NEG_INFINITY)
                } else {
                    Ok(0.0)
                }
            }
            Proposer::Surrogate(s) => s.log_density(theta),
        }
    }
}

/// One annealing stage: evaluated points with their proposal and stored
/// log-likelihoods at the stage's fidelity.
#[derive(Clone, Debug)]
pub struct StageMemo {
    pub proposer: Proposer,
    pub rule: QuadratureRule,
    pub log_lik: Vec<f64>,
    pub fidelity: usize,
}

impl StageMemo {
    pub fn new(
        proposer: Proposer,
        rule: QuadratureRule,
        log_lik: Vec<f64>,
        fidelity: usize,
    ) -> Result<StageMemo> {
        if !rule.is_normalized() {
            return Err(Error::contract("stage rule must be normalized"));
        }
        if log_lik.len() != rule.len() {
            return Err(Error::contract(
                "log-likelihood count does not match the rule",
            ));
        }
        if log_lik.iter().any(|v| v.is_nan()) {
            return Err(Error::contract("log-likelihood values must not be NaN"));
        }
        Ok(StageMemo {
            proposer,
            rule,
            log_lik,
            fidelity,
        })
    }

    pub fn len(&self) -> usize {
        self.rule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rule.is_empty()
    }
}

pub(crate) fn logsumexp(vals: &[f64]) -> f64 {
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Power-heuristic stage allocation at one point: stage `i` gets weight
/// proportional to `(n_i * q_i)^gamma` where `q_i` is its proposal density.
pub fn power_heuristic(counts: &[usize], log_densities: &[f64], gamma: f64) -> Vec<f64> {
    let logs: Vec<f64> = counts
        .iter()
        .zip(log_densities)
        .map(|(&n, &ld)| gamma * ((n as f64).ln() + ld))
        .collect();
    let total = logsumexp(&logs);
    logs.iter()
        .map(|l| if total.is_finite() { (l - total).exp() } else { 0.0 })
        .collect()
}

/// Temperature-independent part of the combined rule: per pooled point, the
/// stage weight, proposal correction, and heuristic allocation collapse into
/// one log term, leaving `beta * log_lik` for later.
#[derive(Clone, Debug)]
pub struct MisAssembly {
    points: Vec<f64>,
    log_base: Vec<f64>,
    log_lik: Vec<f64>,
    d: usize,
}

impl MisAssembly {
    pub fn new(stages: &[StageMemo], gamma: f64) -> Result<MisAssembly> {
        if stages.is_empty() {
            return Err(Error::contract("mis needs at least one stage"));
        }
        if !(gamma > 0.0) {
            return Err(Error::contract("power-heuristic exponent must be positive"));
        }
        let d = stages[0].rule.dim();
        let fidelity = stages[0].fidelity;
        for s in stages {
            if s.rule.dim() != d {
                return Err(Error::contract("stage dimensions differ"));
            }
            if s.fidelity != fidelity {
                return Err(Error::contract(
                    "stages in one pool must share a fidelity",
                ));
            }
        }
        let counts: Vec<usize> = stages.iter().map(|s| s.len()).collect();
        let total: usize = counts.iter().sum();
        let mut points = Vec::with_capacity(total * d);
        let mut log_base = Vec::with_capacity(total);
        let mut log_lik = Vec::with_capacity(total);
        let mut log_prop = vec![0.0; stages.len()];
        for (si, stage) in stages.iter().enumerate() {
            for (k, (theta, w)) in stage.rule.iter().enumerate() {
                for (m, s) in stages.iter().enumerate() {
                    log_prop[m] = s.proposer.log_density(theta)?;
                }
                let alpha = power_heuristic(&counts, &log_prop, gamma);
                let a = alpha[si];
                let base = if a > 0.0 && w > 0.0 {
                    w.ln() + a.ln() - log_prop[si]
                } else {
                    f64::NEG_INFINITY
                };
                points.extend_from_slice(theta);
                log_base.push(base);
                log_lik.push(stage.log_lik[k]);
            }
        }
        Ok(MisAssembly {
            points,
            log_base,
            log_lik,
            d,
        })
    }

    pub fn len(&self) -> usize {
        self.log_base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_base.is_empty()
    }

    /// Normalized combined rule at inverse temperature `beta`.
    pub fn rule_for_beta(&self, beta: f64) -> Result<QuadratureRule> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::contract("beta must lie in [0, 1]"));
        }
        let logs: Vec<f64> = self
            .log_base
            .iter()
            .zip(&self.log_lik)
            .map(|(b, u)| b + beta * u)
            .collect();
        let total = logsumexp(&logs);
        if !total.is_finite() {
            return Err(Error::DegenerateRule(format!(
                "combined weights collapsed at beta {beta}"
            )));
        }
        let weights: Vec<f64> = logs.iter().map(|l| (l - total).exp()).collect();
        QuadratureRule::new(self.points.clone(), weights, self.d)?.normalize()
    }

    /// Relative effective sample size of the combined rule at `beta`.
    pub fn ress_for_beta(&self, beta: f64) -> Result<f64> {
        self.rule_for_beta(beta)?.ress()
    }
}

/// Combined tempered rule from several stages; see [`MisAssembly`].
pub fn mis_quadrature(stages: &[StageMemo], beta: f64, gamma: f64) -> Result<QuadratureRule> {
    MisAssembly::new(stages, gamma)?.rule_for_beta(beta)
}

/// Self-normalized reweighting of a rule by per-point log ratios.
pub fn snis_reweight(rule: &QuadratureRule, log_ratios: &[f64]) -> Result<QuadratureRule> {
    if log_ratios.len() != rule.len() {
        return Err(Error::contract("log-ratio count does not match the rule"));
    }
    let logs: Vec<f64> = rule
        .iter()
        .zip(log_ratios)
        .map(|((_, w), r)| if w > 0.0 { w.ln() + r } else { f64::NEG_INFINITY })
        .collect();
    let total = logsumexp(&logs);
    if !total.is_finite() {
        return Err(Error::DegenerateRule(
            "reweighted rule has no finite mass".into(),
        ));
    }
    let weights: Vec<f64> = logs.iter().map(|l| (l - total).exp()).collect();
    let points: Vec<f64> = (0..rule.len()).flat_map(|k| rule.point(k).to_vec()).collect();
    QuadratureRule::new(points, weights, rule.dim())?.normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::rqmc_rule;
    use crate::transport::{MapFamily, Reference};
    use approx::assert_relative_eq;

    fn gaussian_log_lik(theta: &[f64], center: &[f64], sigma: f64) -> f64 {
        let sq: f64 = theta
            .iter()
            .zip(center)
            .map(|(t, c)| (t - c) * (t - c))
            .sum();
        -sq / (2.0 * sigma * sigma)
    }

    #[test]
    fn power_heuristic_worked_example() {
        // Two stages with counts 1 and 2 proposing densities 0.25 and 0.75.
        let alpha = power_heuristic(&[1, 2], &[0.25f64.ln(), 0.75f64.ln()], 2.0);
        assert!((alpha[0] - 0.027).abs() < 5e-4, "{alpha:?}");
        assert_relative_eq!(
            alpha[0],
            0.25f64.powi(2) / (0.25f64.powi(2) + 1.5f64.powi(2)),
            epsilon = 1e-14
        );
    }

    #[test]
    fn power_heuristic_partition_of_unity() {
        for gamma in [1.0, 2.0, 3.5] {
            let alpha = power_heuristic(&[25, 25, 50], &[-0.3, 1.2, 0.4], gamma);
            assert_relative_eq!(alpha.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert!(alpha.iter().all(|a| *a >= 0.0));
        }
    }

    #[test]
    fn identical_proposers_share_evenly() {
        let sur = Arc::new(Surrogate::uniform(2, 3).unwrap());
        let stages: Vec<StageMemo> = (0..3)
            .map(|i| {
                let rule = rqmc_rule(2, 25, i).unwrap();
                let lik = (0..25)
                    .map(|k| gaussian_log_lik(rule.point(k), &[0.5, 0.5], 0.3))
                    .collect();
                StageMemo::new(Proposer::Surrogate(sur.clone()), rule, lik, 1).unwrap()
            })
            .collect();
        let assembly = MisAssembly::new(&stages, 2.0).unwrap();
        // Equal counts and identical densities: every point gets 1/3 of the
        // heuristic, so the combined rule matches pooling all points into a
        // single stage.
        let combined = assembly.rule_for_beta(1.0).unwrap();
        let mut pooled_pts = Vec::new();
        let mut pooled_lik = Vec::new();
        for s in &stages {
            for k in 0..s.len() {
                pooled_pts.extend_from_slice(s.rule.point(k));
                pooled_lik.push(s.log_lik[k]);
            }
        }
        let pooled =
            QuadratureRule::new(pooled_pts, vec![1.0 / 75.0; 75], 2).unwrap();
        let single = snis_reweight(&pooled, &pooled_lik).unwrap();
        for k in 0..combined.len() {
            assert_relative_eq!(combined.weight(k), single.weight(k), max_relative = 1e-10);
        }
    }

    #[test]
    fn single_stage_reduces_to_snis() {
        let rule = rqmc_rule(2, 50, 9).unwrap();
        let lik: Vec<f64> = (0..50)
            .map(|k| gaussian_log_lik(rule.point(k), &[0.4, 0.6], 0.2))
            .collect();
        let memo = StageMemo::new(Proposer::Uniform, rule.clone(), lik.clone(), 0).unwrap();
        let beta = 0.7;
        let combined = mis_quadrature(&[memo], beta, 2.0).unwrap();
        let tempered: Vec<f64> = lik.iter().map(|l| beta * l).collect();
        let snis = snis_reweight(&rule, &tempered).unwrap();
        for k in 0..combined.len() {
            assert_relative_eq!(combined.weight(k), snis.weight(k), max_relative = 1e-12);
        }
    }

    #[test]
    fn weights_invariant_to_likelihood_scale() {
        let rule = rqmc_rule(2, 25, 3).unwrap();
        let lik: Vec<f64> = (0..25)
            .map(|k| gaussian_log_lik(rule.point(k), &[0.5, 0.5], 0.25))
            .collect();
        let shifted: Vec<f64> = lik.iter().map(|l| l + 123.456).collect();
        let a = mis_quadrature(
            &[StageMemo::new(Proposer::Uniform, rule.clone(), lik, 0).unwrap()],
            1.0,
            2.0,
        )
        .unwrap();
        let b = mis_quadrature(
            &[StageMemo::new(Proposer::Uniform, rule.clone(), shifted, 0).unwrap()],
            1.0,
            2.0,
        )
        .unwrap();
        for k in 0..a.len() {
            assert_relative_eq!(a.weight(k), b.weight(k), max_relative = 1e-12);
        }
    }

    #[test]
    fn combined_weights_are_normalized() {
        let inner = {
            use rand::{Rng, SeedableRng};
            let mut map = MapFamily::new(2, 3).instantiate().unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
            let cs: Vec<f64> = (0..map.param_count())
                .map(|_| rng.gen_range(-0.5..0.5))
                .collect();
            map.set_coeffs_flat(&cs).unwrap();
            Arc::new(Surrogate::new(map, Reference::Uniform).unwrap())
        };
        let mk = |seed: u64, prop: Proposer| {
            let base = rqmc_rule(2, 25, seed).unwrap();
            let rule = match &prop {
                Proposer::Uniform => base,
                Proposer::Surrogate(s) => s.pullback_quadrature(&base).unwrap(),
            };
            let lik = (0..25)
                .map(|k| gaussian_log_lik(rule.point(k), &[0.55, 0.45], 0.2))
                .collect();
            StageMemo::new(prop, rule, lik, 2).unwrap()
        };
        let stages = vec![mk(1, Proposer::Uniform), mk(2, Proposer::Surrogate(inner))];
        for beta in [0.0, 0.3, 1.0] {
            let r = mis_quadrature(&stages, beta, 2.0).unwrap();
            assert_relative_eq!(r.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert!(r.ress().unwrap() > 0.0);
        }
    }

    #[test]
    fn tempered_mean_matches_grid_oracle() {
        let center = [0.45, 0.6];
        let sigma = 0.15;
        let beta = 0.8;
        let rule = rqmc_rule(2, 512, 21).unwrap();
        let lik: Vec<f64> = (0..rule.len())
            .map(|k| gaussian_log_lik(rule.point(k), &center, sigma))
            .collect();
        let memo = StageMemo::new(Proposer::Uniform, rule, lik, 0).unwrap();
        let combined = mis_quadrature(&[memo], beta, 2.0).unwrap();
        let mut mean = [0.0; 2];
        for (p, w) in combined.iter() {
            mean[0] += w * p[0];
            mean[1] += w * p[1];
        }

        let n = 400;
        let mut oracle = [0.0; 2];
        let mut mass = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = (i as f64 + 0.5) / n as f64;
                let y = (j as f64 + 0.5) / n as f64;
                let v = (beta * gaussian_log_lik(&[x, y], &center, sigma)).exp();
                mass += v;
                oracle[0] += v * x;
                oracle[1] += v * y;
            }
        }
        oracle[0] /= mass;
        oracle[1] /= mass;
        assert!((mean[0] - oracle[0]).abs() < 5e-3, "{mean:?} vs {oracle:?}");
        assert!((mean[1] - oracle[1]).abs() < 5e-3, "{mean:?} vs {oracle:?}");
    }

    #[test]
    fn rejects_mismatched_stages() {
        let r2 = rqmc_rule(2, 8, 1).unwrap();
        let r3 = rqmc_rule(3, 8, 1).unwrap();
        let m2 = StageMemo::new(Proposer::Uniform, r2.clone(), vec![0.0; 8], 0).unwrap();
        let m3 = StageMemo::new(Proposer::Uniform, r3, vec![0.0; 8], 0).unwrap();
        assert!(MisAssembly::new(&[m2.clone(), m3], 2.0).is_err());
        let mf = StageMemo::new(Proposer::Uniform, r2, vec![0.0; 8], 1).unwrap();
        assert!(MisAssembly::new(&[m2, mf], 2.0).is_err());
        assert!(MisAssembly::new(&[], 2.0).is_err());
    }
}
