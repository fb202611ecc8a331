//! Experiment configuration: TOML schema, validation, and canonical hashing.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use tempered_transport::annealer::AnnealConfig;
use tempered_transport::models::{AnalyticTarget, DiffusionProblem};
use tempered_transport::objective::FitConfig;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// One of: diffusion-single, diffusion-multi, analytic-gaussian,
    /// analytic-mixture, analytic-banana.
    pub problem: String,
    /// Run directory; all artifacts land here.
    pub output: PathBuf,
    #[serde(default)]
    pub anneal: AnnealSection,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub emit: EmitSection,
    #[serde(default)]
    pub analytic: AnalyticSection,
}

/// Overrides for the annealing schedule; unset fields fall back to the
/// problem's published defaults.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealSection {
    pub thresholds: Option<Vec<f64>>,
    pub samples_per_step: Option<usize>,
    pub map_orders: Option<Vec<usize>>,
    pub n_beta: Option<usize>,
    pub rho: Option<f64>,
    pub r_min: Option<f64>,
    pub gamma: Option<f64>,
    pub lambda_schedule: Option<Vec<f64>>,
    pub refine_steps: Option<usize>,
    pub max_steps: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub steps: Option<usize>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub l2: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    /// Synthetic-data noise stream.
    pub data: u64,
    /// Per-step randomized QMC scrambles.
    pub rqmc: u64,
    /// Plot samples and metric reference rules.
    pub sampling: u64,
}

impl Default for Seeds {
    fn default() -> Seeds {
        Seeds {
            data: 0,
            rqmc: 0,
            sampling: 0,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmitSection {
    /// Per-step quadrature dumps.
    pub quadrature: bool,
    /// Final surrogate density on a grid.
    pub density_grid: bool,
    /// Final surrogate samples.
    pub samples: bool,
    pub sample_count: usize,
    pub grid_resolution: usize,
    /// Kernel bandwidth for the MMD error columns.
    pub bandwidth: f64,
    /// Points in the prior rule and surrogate pullback used for MMD.
    pub mmd_points: usize,
    /// Per-dimension Gauss-Legendre order of the reference posterior.
    pub reference_order: usize,
}

impl Default for EmitSection {
    fn default() -> EmitSection {
        EmitSection {
            quadrature: true,
            density_grid: false,
            samples: false,
            sample_count: 4096,
            grid_resolution: 200,
            bandwidth: 0.05,
            mmd_points: 4096,
            reference_order: 50,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticSection {
    /// Per-fidelity widening factors; the last must be 1.
    pub widenings: Vec<f64>,
    pub sigma2: f64,
}

impl Default for AnalyticSection {
    fn default() -> AnalyticSection {
        AnalyticSection {
            widenings: vec![1.0],
            sigma2: 0.04,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Problem {
    Diffusion(DiffusionProblem),
    Analytic {
        target: AnalyticTarget,
        widenings: Vec<f64>,
        sigma2: f64,
    },
}

impl Problem {
    pub fn num_fidelities(&self) -> usize {
        match self {
            Problem::Diffusion(p) => p.resolutions.len(),
            Problem::Analytic { widenings, .. } => widenings.len(),
        }
    }
}

/// A parsed and validated experiment, ready to run.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub raw: ExperimentConfig,
    pub problem: Problem,
    pub anneal: AnnealConfig,
    pub seeds: Seeds,
    pub emit: EmitSection,
    pub output: PathBuf,
}

fn problem_defaults(problem: &str, errors: &mut Vec<String>) -> (Option<Problem>, AnnealConfig) {
    match problem {
        "diffusion-single" => (
            Some(Problem::Diffusion(DiffusionProblem::single_source())),
            AnnealConfig::single_source_diffusion(),
        ),
        "diffusion-multi" => (
            Some(Problem::Diffusion(DiffusionProblem::multi_source())),
            AnnealConfig::multi_source_diffusion(),
        ),
        "analytic-gaussian" | "analytic-mixture" | "analytic-banana" => {
            let target = match problem {
                "analytic-gaussian" => AnalyticTarget::gaussian(),
                "analytic-mixture" => AnalyticTarget::mixture(),
                _ => AnalyticTarget::banana(),
            };
            let mut cfg = AnnealConfig::new(vec![1.0], 64);
            cfg.map_orders = vec![4];
            (
                Some(Problem::Analytic {
                    target,
                    widenings: vec![1.0],
                    sigma2: 0.04,
                }),
                cfg,
            )
        }
        other => {
            errors.push(format!(
                "unknown problem '{other}' (expected diffusion-single, diffusion-multi, \
                 analytic-gaussian, analytic-mixture, or analytic-banana)"
            ));
            (None, AnnealConfig::new(vec![1.0], 2))
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig, Vec<String>> {
        toml::from_str(text).map_err(|e| vec![format!("config parse error: {e}")])
    }

    /// Canonical serialization: independent of source formatting and key
    /// order, so the run-directory hash only changes with meaning.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serialization cannot fail")
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Resolves defaults and reports every validation problem at once.
    pub fn resolve(&self) -> Result<Experiment, Vec<String>> {
        let mut errors = Vec::new();
        let (problem, mut anneal) = problem_defaults(&self.problem, &mut errors);

        if let Some(v) = &self.anneal.thresholds {
            anneal.thresholds = v.clone();
        }
        if let Some(v) = self.anneal.samples_per_step {
            anneal.samples_per_step = v;
        }
        if let Some(v) = &self.anneal.map_orders {
            anneal.map_orders = v.clone();
        }
        if let Some(v) = self.anneal.n_beta {
            anneal.n_beta = v;
        }
        if let Some(v) = self.anneal.rho {
            anneal.rho = v;
        }
        if let Some(v) = self.anneal.r_min {
            anneal.r_min = v;
        }
        if let Some(v) = self.anneal.gamma {
            anneal.gamma = v;
        }
        if let Some(v) = &self.anneal.lambda_schedule {
            anneal.lambda_schedule = v.clone();
        }
        if let Some(v) = self.anneal.refine_steps {
            anneal.refine_steps = v;
        }
        if let Some(v) = self.anneal.max_steps {
            anneal.max_steps = v;
        }

        let mut fit = FitConfig::default();
        if let Some(v) = self.fit.steps {
            fit.steps = v;
        }
        if let Some(v) = self.fit.learning_rate {
            fit.learning_rate = v;
        }
        if let Some(v) = self.fit.momentum {
            fit.momentum = v;
        }
        if let Some(v) = self.fit.l2 {
            fit.l2 = v;
        }
        anneal.fit = fit;
        anneal.seed = self.seeds.rqmc;

        if let Err(e) = anneal.validate() {
            errors.push(format!("anneal: {e}"));
        }

        let mut problem = problem;
        if let Some(Problem::Analytic {
            widenings, sigma2, ..
        }) = problem.as_mut()
        {
            *widenings = self.analytic.widenings.clone();
            *sigma2 = self.analytic.sigma2;
            if widenings.len() != anneal.thresholds.len() {
                errors.push(format!(
                    "analytic.widenings has {} entries but anneal.thresholds has {}",
                    widenings.len(),
                    anneal.thresholds.len()
                ));
            }
            if widenings.last() != Some(&1.0) {
                errors.push("analytic.widenings must end at 1".into());
            }
            if widenings.iter().any(|w| !(*w > 0.0)) {
                errors.push("analytic.widenings must be positive".into());
            }
            if !(*sigma2 > 0.0) {
                errors.push("analytic.sigma2 must be positive".into());
            }
        }

        if self.emit.sample_count < 2 {
            errors.push("emit.sample_count must be at least 2".into());
        }
        if self.emit.grid_resolution < 2 {
            errors.push("emit.grid_resolution must be at least 2".into());
        }
        if !(self.emit.bandwidth > 0.0) {
            errors.push("emit.bandwidth must be positive".into());
        }
        if self.emit.mmd_points < 2 {
            errors.push("emit.mmd_points must be at least 2".into());
        }
        if self.emit.reference_order < 2 {
            errors.push("emit.reference_order must be at least 2".into());
        }
        if self.output.as_os_str().is_empty() {
            errors.push("output directory must be set".into());
        }

        if let Some(p) = &problem {
            if p.num_fidelities() < anneal.thresholds.len() {
                errors.push(format!(
                    "problem provides {} fidelities but anneal.thresholds needs {}",
                    p.num_fidelities(),
                    anneal.thresholds.len()
                ));
            }
        }

        if !errors.is_empty() {
            return Err(errors);
        }
        Ok(Experiment {
            raw: self.clone(),
            problem: problem.unwrap(),
            anneal,
            seeds: self.seeds.clone(),
            emit: self.emit.clone(),
            output: self.output.clone(),
        })
    }
}
