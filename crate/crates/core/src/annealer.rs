//! Generalized annealing driver: joint fidelity and temperature schedule.
//!
//! Each step draws a fresh randomized QMC rule, pulls it back through the
//! previous surrogate, spends exactly `n_j` likelihood evaluations on the new
//! points, recombines every stage of the current fidelity into a tempered
//! rule, and fits the next surrogate to it. The temperature is chosen
//! adaptively from a fixed candidate grid using the effective sample size of
//! the candidate rules; the search itself never touches the model.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mis::{MisAssembly, Proposer, StageMemo};
use crate::models::LikelihoodHierarchy;
use crate::objective::{fit, FitConfig};
use crate::quadrature::{rqmc_rule, QuadratureRule};
use crate::transport::{MapFamily, Reference, Surrogate};

#[derive(Clone, Debug)]
pub struct AnnealConfig {
    /// Fidelity thresholds `t_ℓ`, strictly increasing and ending at 1.
    pub thresholds: Vec<f64>,
    /// Fresh evaluations per step.
    pub samples_per_step: usize,
    /// Map total order per step; the last entry repeats if the run is longer.
    pub map_orders: Vec<usize>,
    /// Candidate count for the temperature grid.
    pub n_beta: usize,
    /// Discount on the previous rESS in the acceptance threshold.
    pub rho: f64,
    /// Absolute rESS floor.
    pub r_min: f64,
    /// Power-heuristic exponent.
    pub gamma: f64,
    /// Optimizer settings; `fit.l2` is the default penalty.
    pub fit: FitConfig,
    /// Per-step penalty override; last entry repeats. Empty uses `fit.l2`.
    pub lambda_schedule: Vec<f64>,
    /// Extra steps at β = 1 after first reaching it.
    pub refine_steps: usize,
    pub seed: u64,
    /// Hard bound on total steps.
    pub max_steps: usize,
}

impl AnnealConfig {
    /// Defaults shared by the worked examples; problem-specific schedules
    /// override the fields they need.
    pub fn new(thresholds: Vec<f64>, samples_per_step: usize) -> AnnealConfig {
        AnnealConfig {
            thresholds,
            samples_per_step,
            map_orders: vec![3],
            n_beta: 40,
            rho: 0.8,
            r_min: 0.5,
            gamma: 2.0,
            fit: FitConfig::default(),
            lambda_schedule: Vec::new(),
            refine_steps: 1,
            seed: 0,
            max_steps: 64,
        }
    }

    /// The published single-source diffusion schedule. The scheduler floor
    /// is relaxed so the tempering finishes on the published step budget;
    /// the memo-pool reset at each fidelity transition restores rESS.
    pub fn single_source_diffusion() -> AnnealConfig {
        AnnealConfig {
            map_orders: vec![4, 4, 5, 5, 3, 3, 7],
            rho: 0.7,
            r_min: 0.3,
            ..AnnealConfig::new(vec![0.5, 0.8, 1.0], 25)
        }
    }

    /// The published multi-source diffusion schedule.
    pub fn multi_source_diffusion() -> AnnealConfig {
        AnnealConfig {
            map_orders: vec![4, 6, 6, 3, 3, 6, 7],
            rho: 0.7,
            r_min: 0.3,
            refine_steps: 2,
            ..AnnealConfig::new(vec![0.5, 0.8, 1.0], 25)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::contract("at least one fidelity threshold required"));
        }
        if self.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::contract("thresholds must lie in (0, 1]"));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) || self.thresholds[0] <= 0.0 {
            return Err(Error::contract("thresholds must be strictly increasing"));
        }
        if *self.thresholds.last().unwrap() != 1.0 {
            return Err(Error::contract("final threshold must equal 1"));
        }
        if self.samples_per_step < 2 {
            return Err(Error::contract("need at least two samples per step"));
        }
        if self.map_orders.is_empty() {
            return Err(Error::contract("map order schedule must be non-empty"));
        }
        if self.n_beta < 2 {
            return Err(Error::contract("temperature grid needs at least two candidates"));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) || !(self.r_min > 0.0 && self.r_min < 1.0) {
            return Err(Error::contract("rho and r_min must lie in (0, 1)"));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::contract("gamma must be positive"));
        }
        if self.max_steps == 0 {
            return Err(Error::contract("max_steps must be positive"));
        }
        Ok(())
    }

    pub fn order_for_step(&self, j: usize) -> usize {
        *self
            .map_orders
            .get(j)
            .unwrap_or_else(|| self.map_orders.last().unwrap())
    }

    pub fn lambda_for_step(&self, j: usize) -> f64 {
        if self.lambda_schedule.is_empty() {
            self.fit.l2
        } else {
            *self
                .lambda_schedule
                .get(j)
                .unwrap_or_else(|| self.lambda_schedule.last().unwrap())
        }
    }
}

/// Acceptance threshold for a candidate temperature.
pub fn beta_threshold(rho: f64, r_prev: f64, r_min: f64) -> f64 {
    (rho * r_prev).max(r_min)
}

#[derive(Clone, Debug)]
pub struct BetaChoice {
    pub beta: f64,
    pub rule: QuadratureRule,
    pub ress: f64,
    /// Set when no candidate exceeded `beta_prev` below the cap; the
    /// returned temperature is `beta_prev` itself.
    pub stalled: bool,
}

/// Largest grid temperature in `(beta_prev, cap]` whose combined rule keeps
/// `rESS >= max(rho * r_prev, r_min)`; falls back to the smallest candidate
/// above `beta_prev` when none qualifies. Pure function of the assembly: no
/// model evaluations happen here.
pub fn choose_beta(
    assembly: &MisAssembly,
    beta_prev: f64,
    r_prev: f64,
    cap: f64,
    config: &AnnealConfig,
) -> Result<BetaChoice> {
    if !(0.0..=1.0).contains(&beta_prev) || !(0.0..=1.0).contains(&cap) {
        return Err(Error::contract("temperatures must lie in [0, 1]"));
    }
    let mut candidates: Vec<f64> = (1..=config.n_beta)
        .map(|q| q as f64 / config.n_beta as f64)
        .filter(|b| *b > beta_prev && *b < cap)
        .collect();
    if cap > beta_prev {
        candidates.push(cap);
    }
    if candidates.is_empty() {
        let rule = assembly.rule_for_beta(beta_prev)?;
        let ress = rule.ress()?;
        return Ok(BetaChoice {
            beta: beta_prev,
            rule,
            ress,
            stalled: true,
        });
    }
    let threshold = beta_threshold(config.rho, r_prev, config.r_min);
    for &b in candidates.iter().rev() {
        let rule = assembly.rule_for_beta(b)?;
        let ress = rule.ress()?;
        if ress >= threshold {
            return Ok(BetaChoice {
                beta: b,
                rule,
                ress,
                stalled: false,
            });
        }
    }
    let b = candidates[0];
    let rule = assembly.rule_for_beta(b)?;
    let ress = rule.ress()?;
    Ok(BetaChoice {
        beta: b,
        rule,
        ress,
        stalled: false,
    })
}

/// One diagnostics row; wall time is deliberately absent so the table is
/// bit-identical across reruns.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub fidelity: usize,
    pub beta: f64,
    pub param_count: usize,
    pub ress: f64,
    pub new_evals: u64,
    pub cumulative_evals: Vec<u64>,
    pub stalled: bool,
    pub fit_loss: f64,
}

#[derive(Clone)]
pub struct StepRecord {
    pub diagnostics: StepDiagnostics,
    pub quadrature: QuadratureRule,
    pub surrogate: Arc<Surrogate>,
}

pub struct AnnealOutcome {
    pub steps: Vec<StepRecord>,
    pub final_surrogate: Arc<Surrogate>,
    pub final_rule: QuadratureRule,
    pub archive: Vec<StageMemo>,
}

fn step_seed(seed: u64, j: usize) -> u64 {
    // splitmix64 finalizer over the step index.
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(j as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn anneal(hier: &LikelihoodHierarchy, config: &AnnealConfig) -> Result<AnnealOutcome> {
    anneal_with(hier, config, |_| Ok(()))
}

/// Runs the loop, invoking `on_step` after every completed step so callers
/// can persist incremental artifacts.
pub fn anneal_with<F>(
    hier: &LikelihoodHierarchy,
    config: &AnnealConfig,
    mut on_step: F,
) -> Result<AnnealOutcome>
where
    F: FnMut(&StepRecord) -> Result<()>,
{
    config.validate()?;
    if hier.num_fidelities() < config.thresholds.len() {
        return Err(Error::contract(
            "hierarchy has fewer fidelities than thresholds",
        ));
    }
    let d = hier.dim();
    let n = config.samples_per_step;

    let mut fidelity = 1usize;
    let mut beta = 0.0f64;
    let mut r_prev = 1.0f64;
    let mut refines_done = 0usize;
    let mut memos: Vec<StageMemo> = Vec::new();
    let mut archive: Vec<StageMemo> = Vec::new();
    let mut prev: Option<Arc<Surrogate>> = None;
    let mut first_step_of_fidelity = true;
    let mut steps: Vec<StepRecord> = Vec::new();

    for j in 0..config.max_steps {
        let cap = config.thresholds[fidelity - 1];

        // Fresh points, transported through the previous surrogate.
        let base = rqmc_rule(d, n, step_seed(config.seed, j))?;
        let (stage_rule, proposer) = match &prev {
            None => (base, Proposer::Uniform),
            Some(s) => (s.pullback_quadrature(&base)?, Proposer::Surrogate(s.clone())),
        };

        // The only model evaluations of this step: exactly n requested.
        use rayon::prelude::*;
        let points: Vec<Vec<f64>> =
            (0..n).map(|k| stage_rule.point(k).to_vec()).collect();
        let log_lik: Vec<f64> = points
            .par_iter()
            .map(|p| hier.log_likelihood(fidelity, p))
            .collect::<Result<_>>()?;

        let memo = StageMemo::new(proposer, stage_rule, log_lik, fidelity)?;
        memos.push(memo.clone());
        archive.push(memo);

        let assembly = MisAssembly::new(&memos, config.gamma)?;
        let choice = choose_beta(&assembly, beta, r_prev, cap, config)?;
        beta = choice.beta;
        r_prev = choice.ress;

        let reference = if first_step_of_fidelity {
            match &prev {
                Some(s) => Reference::Surrogate(s.clone()),
                None => Reference::Uniform,
            }
        } else {
            Reference::Uniform
        };
        let family = MapFamily::new(d, config.order_for_step(j));
        let fit_cfg = FitConfig {
            l2: config.lambda_for_step(j),
            ..config.fit
        };
        let (surrogate, report) = fit(family, reference, &choice.rule, &fit_cfg)?;
        let surrogate = Arc::new(surrogate);

        let record = StepRecord {
            diagnostics: StepDiagnostics {
                step: j,
                fidelity,
                beta,
                param_count: surrogate.map().param_count(),
                ress: choice.ress,
                new_evals: n as u64,
                cumulative_evals: hier.eval_counts(),
                stalled: choice.stalled,
                fit_loss: report.final_loss,
            },
            quadrature: choice.rule,
            surrogate: surrogate.clone(),
        };
        on_step(&record)?;
        steps.push(record);
        prev = Some(surrogate);
        first_step_of_fidelity = false;

        if beta >= cap {
            if fidelity < config.thresholds.len() {
                fidelity += 1;
                memos.clear();
                first_step_of_fidelity = true;
            } else if refines_done >= config.refine_steps {
                break;
            } else {
                refines_done += 1;
            }
        }
    }

    let last = steps
        .last()
        .ok_or_else(|| Error::invariant("annealing produced no steps"))?;
    if last.diagnostics.beta < 1.0 {
        return Err(Error::Contract(format!(
            "step budget {} exhausted at beta {}",
            config.max_steps, last.diagnostics.beta
        )));
    }
    Ok(AnnealOutcome {
        final_surrogate: last.surrogate.clone(),
        final_rule: last.quadrature.clone(),
        steps,
        archive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::AnalyticTarget;
    use approx::assert_relative_eq;

    fn flat_assembly(n: usize) -> MisAssembly {
        let rule = rqmc_rule(2, n, 3).unwrap();
        let memo = StageMemo::new(Proposer::Uniform, rule, vec![-1.0; n], 1).unwrap();
        MisAssembly::new(&[memo], 2.0).unwrap()
    }

    fn sharp_assembly(n: usize) -> MisAssembly {
        let rule = rqmc_rule(2, n, 3).unwrap();
        let lik: Vec<f64> = (0..n)
            .map(|k| {
                let p = rule.point(k);
                let d2 = (p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2);
                -d2 / (2.0 * 0.01f64.powi(2))
            })
            .collect();
        let memo = StageMemo::new(Proposer::Uniform, rule, lik, 1).unwrap();
        MisAssembly::new(&[memo], 2.0).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(AnnealConfig::new(vec![0.5, 0.8, 1.0], 25).validate().is_ok());
        assert!(AnnealConfig::new(vec![], 25).validate().is_err());
        assert!(AnnealConfig::new(vec![0.8, 0.5, 1.0], 25).validate().is_err());
        assert!(AnnealConfig::new(vec![0.5, 0.9], 25).validate().is_err());
        let mut c = AnnealConfig::new(vec![1.0], 25);
        c.rho = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn threshold_arithmetic() {
        assert_relative_eq!(beta_threshold(0.8, 0.9, 0.5), 0.72);
        assert_relative_eq!(beta_threshold(0.8, 0.3, 0.5), 0.5);
    }

    #[test]
    fn flat_target_jumps_to_cap() {
        let cfg = AnnealConfig::new(vec![1.0], 16);
        let choice = choose_beta(&flat_assembly(32), 0.0, 1.0, 0.7, &cfg).unwrap();
        assert_relative_eq!(choice.beta, 0.7);
        assert!(!choice.stalled);
        assert!(choice.ress > 0.9);
    }

    #[test]
    fn sharp_target_forces_smallest_step() {
        let cfg = AnnealConfig::new(vec![1.0], 16);
        let choice = choose_beta(&sharp_assembly(64), 0.0, 1.0, 1.0, &cfg).unwrap();
        assert_relative_eq!(choice.beta, 1.0 / 40.0);
        assert!(!choice.stalled);
        assert!(choice.ress < 0.5);
    }

    #[test]
    fn at_cap_reports_stalled() {
        let cfg = AnnealConfig::new(vec![1.0], 16);
        let choice = choose_beta(&flat_assembly(32), 0.7, 1.0, 0.7, &cfg).unwrap();
        assert!(choice.stalled);
        assert_relative_eq!(choice.beta, 0.7);
    }

    #[test]
    fn beta_search_makes_no_model_evaluations() {
        let target = AnalyticTarget::gaussian();
        let hier = target.hierarchy(&[1.0], 0.04).unwrap();
        let rule = rqmc_rule(2, 32, 5).unwrap();
        let lik: Vec<f64> = (0..32)
            .map(|k| hier.log_likelihood(1, rule.point(k)).unwrap())
            .collect();
        let memo = StageMemo::new(Proposer::Uniform, rule, lik, 1).unwrap();
        let assembly = MisAssembly::new(&[memo], 2.0).unwrap();
        let before = hier.total_evals();
        let cfg = AnnealConfig::new(vec![1.0], 16);
        for beta_prev in [0.0, 0.2, 0.5] {
            choose_beta(&assembly, beta_prev, 1.0, 1.0, &cfg).unwrap();
        }
        assert_eq!(hier.total_evals(), before);
    }

    #[test]
    fn anneal_single_fidelity_gaussian_matches_oracle() {
        let target = AnalyticTarget::gaussian();
        let hier = target.hierarchy(&[1.0], 0.04).unwrap();
        let mut cfg = AnnealConfig::new(vec![1.0], 64);
        cfg.map_orders = vec![4];
        cfg.seed = 11;
        let out = anneal(&hier, &cfg).unwrap();
        let last = &out.steps.last().unwrap().diagnostics;
        assert_relative_eq!(last.beta, 1.0);

        let (mean, cov) = crate::metrics::weighted_moments(&out.final_rule).unwrap();
        let (oracle_mean, _) = target.grid_moments(1.0, 400);
        let w2: f64 = out.final_rule.weights().iter().map(|w| w * w).sum();
        for i in 0..2 {
            let se = (cov[(i, i)] * w2).sqrt();
            assert!(
                (mean[i] - oracle_mean[i]).abs() <= 3.0 * se,
                "coord {i}: {} vs {} (se {se})",
                mean[i],
                oracle_mean[i]
            );
        }
    }

    #[test]
    fn anneal_contract_properties() {
        let target = AnalyticTarget::gaussian();
        let hier = target.hierarchy(&[2.0, 1.4, 1.0], 0.04).unwrap();
        let mut cfg = AnnealConfig::new(vec![0.5, 0.8, 1.0], 32);
        cfg.map_orders = vec![3];
        cfg.seed = 7;
        let out = anneal(&hier, &cfg).unwrap();

        let mut prev_beta = 0.0;
        let mut prev_fid = 1;
        let mut expected_pool = 0usize;
        for rec in &out.steps {
            let d = &rec.diagnostics;
            assert!(d.beta >= prev_beta, "beta decreased");
            assert!(d.fidelity >= prev_fid, "fidelity decreased");
            assert!(d.beta <= cfg.thresholds[d.fidelity - 1] + 1e-15);
            assert_eq!(d.new_evals, 32);
            if d.fidelity != prev_fid {
                expected_pool = 0;
            }
            expected_pool += 32;
            assert_eq!(rec.quadrature.len(), expected_pool);
            assert!(rec.quadrature.is_normalized());
            prev_beta = d.beta;
            prev_fid = d.fidelity;
        }
        let last = out.steps.last().unwrap();
        assert_relative_eq!(last.diagnostics.beta, 1.0);
        assert_eq!(last.diagnostics.fidelity, 3);
        // Requested evaluations are fully accounted for.
        assert_eq!(
            hier.total_evals(),
            (out.steps.len() * 32) as u64
        );
    }

    #[test]
    fn anneal_is_deterministic() {
        let target = AnalyticTarget::mixture();
        let run = || {
            let hier = target.hierarchy(&[1.5, 1.0], 0.04).unwrap();
            let mut cfg = AnnealConfig::new(vec![0.6, 1.0], 24);
            cfg.map_orders = vec![3, 4];
            cfg.seed = 3;
            let out = anneal(&hier, &cfg).unwrap();
            out.steps
                .iter()
                .map(|r| r.diagnostics.clone())
                .collect::<Vec<_>>()
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y);
            assert_eq!(x.beta.to_bits(), y.beta.to_bits());
            assert_eq!(x.ress.to_bits(), y.ress.to_bits());
        }
    }
}
