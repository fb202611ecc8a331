//! Experiment execution: artifact layout, replay-based resume, plot dumps.
//!
//! A run directory contains `config.toml` (canonical copy), `config.sha256`,
//! `data.csv`, `cache.csv`, `diagnostics.csv`, `timing.csv`, per-step
//! `quadrature_<j>.csv`, `surrogate_final`, optional `density_grid.csv` and
//! `samples.csv`, and a `DONE` marker. Resume replays the whole schedule
//! against the evaluation cache, so a completed prefix costs zero solves and
//! the final artifacts are bit-identical to an uninterrupted run.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use tempered_transport::annealer::{anneal_with, StepRecord};
use tempered_transport::metrics::{reference_posterior, relative_errors, ErrorReport};
use tempered_transport::models::{
    AnalyticForward, Forward, LikelihoodHierarchy, PoissonForward,
};
use tempered_transport::quadrature::{rqmc_rule, QuadratureRule};
use tempered_transport::transport::Surrogate;
use tempered_transport::Error;

use crate::cache::{CachedForward, EvalCache};
use crate::config::{EmitSection, Experiment, ExperimentConfig, Problem};

#[derive(Debug)]
pub enum CliError {
    /// Configuration problems; exit code 2.
    Config(Vec<String>),
    /// Mid-run failures; exit code 3.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn report(&self) -> String {
        match self {
            CliError::Config(errs) => {
                let mut out = String::from("configuration errors:\n");
                for e in errs {
                    out.push_str("  - ");
                    out.push_str(e);
                    out.push('\n');
                }
                out
            }
            CliError::Runtime(msg) => format!("runtime failure: {msg}\n"),
        }
    }
}

fn runtime(err: impl std::fmt::Display) -> CliError {
    CliError::Runtime(err.to_string())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagRow {
    pub step: usize,
    pub fidelity: usize,
    pub beta: f64,
    pub param_count: usize,
    pub ress: f64,
    pub errors: ErrorReport,
    pub new_evals: u64,
    pub cumulative_evals: u64,
}

pub struct RunSummary {
    pub rows: Vec<DiagRow>,
    pub final_surrogate: Arc<Surrogate>,
    pub final_rule: QuadratureRule,
    /// Fresh forward solves this invocation (cache misses).
    pub new_solves: u64,
    pub cache_records: Vec<u64>,
    pub output: PathBuf,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Abort cleanly after this many completed steps (exit 3, artifacts
    /// kept); used to exercise interrupt/resume.
    pub halt_after: Option<usize>,
    pub quiet: bool,
}

pub fn validate(config_path: &Path) -> Result<Experiment, CliError> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| CliError::Config(vec![format!("cannot read {config_path:?}: {e}")]))?;
    let cfg = ExperimentConfig::parse(&text).map_err(CliError::Config)?;
    cfg.resolve().map_err(CliError::Config)
}

pub fn run(config_path: &Path, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let exp = validate(config_path)?;
    let output = exp.output.clone();
    run_in_dir(exp, &output, opts)
}

pub fn resume(dir: &Path, opts: &RunOptions) -> Result<Option<RunSummary>, CliError> {
    let config_path = dir.join("config.toml");
    if !config_path.exists() {
        return Err(CliError::Config(vec![format!(
            "{dir:?} is not a run directory (missing config.toml)"
        )]));
    }
    let exp = validate(&config_path)?;
    let stored = fs::read_to_string(dir.join("config.sha256"))
        .map_err(|e| CliError::Config(vec![format!("missing config.sha256: {e}")]))?;
    if stored.trim() != exp.raw.hash() {
        return Err(CliError::Config(vec![format!(
            "config hash mismatch: directory records {}, config.toml hashes to {}",
            stored.trim(),
            exp.raw.hash()
        )]));
    }
    if dir.join("DONE").exists() {
        if !opts.quiet {
            println!("run already complete; nothing to do");
        }
        return Ok(None);
    }
    run_in_dir(exp, dir, opts).map(Some)
}

fn display_join(values: &[u64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("/")
}

fn run_in_dir(exp: Experiment, dir: &Path, opts: &RunOptions) -> Result<RunSummary, CliError> {
    fs::create_dir_all(dir).map_err(runtime)?;

    let hash = exp.raw.hash();
    let hash_path = dir.join("config.sha256");
    if hash_path.exists() {
        let stored = fs::read_to_string(&hash_path).map_err(runtime)?;
        if stored.trim() != hash {
            return Err(CliError::Config(vec![format!(
                "run directory {dir:?} was created from a different config \
                 (stored hash {}); use a fresh directory",
                stored.trim()
            )]));
        }
    }
    fs::write(dir.join("config.toml"), exp.raw.canonical_toml()).map_err(runtime)?;
    fs::write(&hash_path, format!("{hash}\n")).map_err(runtime)?;

    // Observation data: load if persisted, otherwise generate and persist.
    let data_path = dir.join("data.csv");
    let y_star: Vec<f64> = if data_path.exists() {
        read_column(&data_path)?
    } else {
        let y = match &exp.problem {
            Problem::Diffusion(p) => p.generate_data(exp.seeds.data).map_err(runtime)?,
            Problem::Analytic { .. } => vec![0.0],
        };
        write_column(&data_path, &y)?;
        y
    };

    let cache = Arc::new(EvalCache::open(&dir.join("cache.csv"), 2).map_err(runtime)?);
    let hier = build_hierarchy(&exp, &y_star, Some(cache.clone())).map_err(runtime)?;
    // Metric reference evaluations bypass the cache so its record count
    // stays equal to the annealer's requested evaluations.
    let metrics_hier = build_hierarchy(&exp, &y_star, None).map_err(runtime)?;

    let top = exp.anneal.thresholds.len();
    let reference = reference_posterior(2, exp.emit.reference_order, |p| {
        metrics_hier.log_likelihood(top, p)
    })
    .map_err(runtime)?;
    let prior = rqmc_rule(2, exp.emit.mmd_points, exp.seeds.sampling).map_err(runtime)?;

    let mut diag = BufWriter::new(File::create(dir.join("diagnostics.csv")).map_err(runtime)?);
    writeln!(
        diag,
        "j,fidelity,beta,p,ress,rmse,forstner,mmd_m15,mmd_g,new_evals,cumulative_evals"
    )
    .map_err(runtime)?;
    let mut timing = BufWriter::new(File::create(dir.join("timing.csv")).map_err(runtime)?);
    writeln!(timing, "j,seconds").map_err(runtime)?;

    let mut rows: Vec<DiagRow> = Vec::new();
    let mut clock = Instant::now();
    let halt_after = opts.halt_after;
    let quiet = opts.quiet;

    let result = anneal_with(&hier, &exp.anneal, |record: &StepRecord| {
        let pullback = record.surrogate.pullback_quadrature(&prior)?;
        let errors = relative_errors(
            &record.quadrature,
            &pullback,
            &reference,
            &prior,
            exp.emit.bandwidth,
        )?;
        let d = &record.diagnostics;
        let cumulative: u64 = d.cumulative_evals.iter().sum();
        let row = DiagRow {
            step: d.step,
            fidelity: d.fidelity,
            beta: d.beta,
            param_count: d.param_count,
            ress: d.ress,
            errors,
            new_evals: d.new_evals,
            cumulative_evals: cumulative,
        };
        writeln!(
            diag,
            "{},{},{},{},{},{},{},{},{},{},{}",
            row.step,
            row.fidelity,
            row.beta,
            row.param_count,
            row.ress,
            errors.rmse,
            errors.forstner,
            errors.mmd_m15,
            errors.mmd_g,
            row.new_evals,
            row.cumulative_evals
        )
        .and_then(|_| diag.flush())
        .map_err(|e| Error::contract(format!("diagnostics write: {e}")))?;
        let elapsed = clock.elapsed().as_secs_f64();
        clock = Instant::now();
        writeln!(timing, "{},{elapsed}", row.step)
            .and_then(|_| timing.flush())
            .map_err(|e| Error::contract(format!("timing write: {e}")))?;
        if exp.emit.quadrature {
            let f = File::create(dir.join(format!("quadrature_{}.csv", row.step)))
                .map_err(|e| Error::contract(format!("quadrature dump: {e}")))?;
            record
                .quadrature
                .write_columns(BufWriter::new(f))
                .map_err(|e| Error::contract(format!("quadrature dump: {e}")))?;
        }
        if !quiet {
            println!(
                "step {}: fidelity {} beta {:.4} rESS {:.3} rmse {:.3} forstner {:.3} \
                 mmd15 {:.3} mmdg {:.3}",
                row.step,
                row.fidelity,
                row.beta,
                row.ress,
                errors.rmse,
                errors.forstner,
                errors.mmd_m15,
                errors.mmd_g
            );
        }
        rows.push(row);
        if halt_after == Some(d.step + 1) {
            return Err(Error::contract(format!(
                "halted on request after step {}",
                d.step
            )));
        }
        Ok(())
    });

    let outcome = result.map_err(runtime)?;

    {
        let mut f =
            BufWriter::new(File::create(dir.join("surrogate_final")).map_err(runtime)?);
        outcome.final_surrogate.write_text(&mut f).map_err(runtime)?;
    }
    if exp.emit.density_grid {
        write_density_grid(dir, &outcome.final_surrogate, &exp.emit)?;
    }
    if exp.emit.samples {
        write_samples(dir, &outcome.final_surrogate, &exp.emit, exp.seeds.sampling)?;
    }
    fs::write(dir.join("DONE"), format!("{hash}\n")).map_err(runtime)?;

    let cache_records = cache.record_counts(exp.problem.num_fidelities());
    if !quiet {
        println!(
            "done: {} steps, {} requested evaluations ({} fresh solves, cache {})",
            rows.len(),
            hier.total_evals(),
            cache.misses(),
            display_join(&cache_records)
        );
    }

    Ok(RunSummary {
        rows,
        final_surrogate: outcome.final_surrogate,
        final_rule: outcome.final_rule,
        new_solves: cache.misses(),
        cache_records,
        output: dir.to_path_buf(),
    })
}

fn build_hierarchy(
    exp: &Experiment,
    y_star: &[f64],
    cache: Option<Arc<EvalCache>>,
) -> tempered_transport::Result<LikelihoodHierarchy> {
    let (forwards, y, sigma2): (Vec<Arc<dyn Forward>>, Vec<f64>, f64) = match &exp.problem {
        Problem::Diffusion(p) => (
            p.resolutions
                .iter()
                .map(|&r| {
                    Arc::new(PoissonForward::new(r, p.alpha, p.sensors.clone()))
                        as Arc<dyn Forward>
                })
                .collect(),
            y_star.to_vec(),
            p.sigma2,
        ),
        Problem::Analytic {
            target,
            widenings,
            sigma2,
        } => (
            widenings
                .iter()
                .map(|&w| {
                    Arc::new(AnalyticForward::new(target.clone(), w, *sigma2))
                        as Arc<dyn Forward>
                })
                .collect(),
            vec![0.0],
            *sigma2,
        ),
    };
    let forwards = match cache {
        None => forwards,
        Some(c) => forwards
            .into_iter()
            .enumerate()
            .map(|(i, fw)| {
                Ok(Arc::new(CachedForward::new(fw, i + 1, c.clone())?) as Arc<dyn Forward>)
            })
            .collect::<tempered_transport::Result<_>>()?,
    };
    LikelihoodHierarchy::new(forwards, y, sigma2)
}

fn write_density_grid(
    dir: &Path,
    surrogate: &Surrogate,
    emit: &EmitSection,
) -> Result<(), CliError> {
    let g = emit.grid_resolution;
    let mut out =
        BufWriter::new(File::create(dir.join("density_grid.csv")).map_err(runtime)?);
    writeln!(out, "x,y,density").map_err(runtime)?;
    for i in 0..g {
        let x = (i as f64 + 0.5) / g as f64;
        for j in 0..g {
            let y = (j as f64 + 0.5) / g as f64;
            let dens = surrogate.log_density(&[x, y]).map_err(runtime)?.exp();
            writeln!(out, "{x},{y},{dens}").map_err(runtime)?;
        }
    }
    out.flush().map_err(runtime)
}

fn write_samples(
    dir: &Path,
    surrogate: &Surrogate,
    emit: &EmitSection,
    seed: u64,
) -> Result<(), CliError> {
    let flat = surrogate.sample(emit.sample_count, seed).map_err(runtime)?;
    let mut out = BufWriter::new(File::create(dir.join("samples.csv")).map_err(runtime)?);
    writeln!(out, "theta_0,theta_1").map_err(runtime)?;
    for p in flat.chunks(2) {
        writeln!(out, "{},{}", p[0], p[1]).map_err(runtime)?;
    }
    out.flush().map_err(runtime)
}

pub fn emit_plots(dir: &Path) -> Result<(), CliError> {
    let config_path = dir.join("config.toml");
    if !config_path.exists() {
        return Err(CliError::Config(vec![format!(
            "{dir:?} is not a run directory (missing config.toml)"
        )]));
    }
    let exp = validate(&config_path)?;
    let surrogate_path = dir.join("surrogate_final");
    if !surrogate_path.exists() {
        return Err(CliError::Runtime(
            "run incomplete: surrogate_final not found (resume the run first)".into(),
        ));
    }
    let mut reader = BufReader::new(File::open(&surrogate_path).map_err(runtime)?);
    let surrogate = Surrogate::read_text(&mut reader).map_err(runtime)?;
    write_density_grid(dir, &surrogate, &exp.emit)?;
    write_samples(dir, &surrogate, &exp.emit, exp.seeds.sampling)?;
    Ok(())
}

fn read_column(path: &Path) -> Result<Vec<f64>, CliError> {
    let reader = BufReader::new(File::open(path).map_err(runtime)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(runtime)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            line.trim()
                .parse()
                .map_err(|e| runtime(format!("bad value in {path:?}: {e}")))?,
        );
    }
    Ok(out)
}

fn write_column(path: &Path, values: &[f64]) -> Result<(), CliError> {
    let mut out = BufWriter::new(File::create(path).map_err(runtime)?);
    for v in values {
        writeln!(out, "{v}").map_err(runtime)?;
    }
    out.flush().map_err(runtime)
}
