//! Discretized cross-entropy objective and its optimizer.
//!
//! Given a normalized quadrature rule `Q` approximating the target and a map
//! family with reference `η`, the loss is
//! `L(c) = -Σ_k w_k [log η(S(θ_k; c)) + log |det ∇S(θ_k; c)|] + λ ||c||²`.
//! No target-density evaluations appear anywhere: the target enters only
//! through the weights of `Q`. Minimization is plain Nesterov momentum from
//! a zero (identity-map) initialization.

use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;
use crate::transport::{MapFamily, PointCache, Reference, Surrogate, TriangularMap};

#[derive(Clone, Copy, Debug)]
pub struct FitConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            steps: 1000,
            learning_rate: 1e-3,
            momentum: 0.9,
            l2: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FitReport {
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub grad_norm: f64,
}

/// Per-point geometry caches; everything that does not depend on the
/// coefficients is computed once up front.
struct Workspace<'a> {
    rule: &'a QuadratureRule,
    reference: &'a Reference,
    // caches[k][c] is the cache of component c at point k.
    caches: Vec<Vec<PointCache>>,
    offsets: Vec<usize>,
    n_params: usize,
    l2: f64,
}

impl<'a> Workspace<'a> {
    fn new(
        map: &TriangularMap,
        reference: &'a Reference,
        rule: &'a QuadratureRule,
        l2: f64,
    ) -> Result<Workspace<'a>> {
        if !rule.is_normalized() {
            return Err(Error::contract("fit requires a normalized rule"));
        }
        if rule.dim() != map.dim() {
            return Err(Error::contract("rule dimension does not match the map"));
        }
        let mut caches = Vec::with_capacity(rule.len());
        for (theta, _) in rule.iter() {
            let per_point = map
                .components()
                .iter()
                .enumerate()
                .map(|(c, comp)| comp.point_cache(&theta[..=c]))
                .collect::<Result<Vec<_>>>()?;
            caches.push(per_point);
        }
        let mut offsets = Vec::with_capacity(map.dim());
        let mut acc = 0;
        for comp in map.components() {
            offsets.push(acc);
            acc += comp.num_coeffs();
        }
        Ok(Workspace {
            rule,
            reference,
            caches,
            offsets,
            n_params: acc,
            l2,
        })
    }

    fn loss_only(&self, coeffs: &[f64]) -> Result<f64> {
        let d = self.offsets.len();
        let mut z = vec![0.0; d];
        let mut loss = 0.0;
        for (k, per_point) in self.caches.iter().enumerate() {
            let w = self.rule.weight(k);
            let mut log_det = 0.0;
            for (c, cache) in per_point.iter().enumerate() {
                let seg = self.segment(coeffs, c);
                let (ld, s) = cache.log_det_and_forward(seg);
                log_det += ld;
                z[c] = s;
            }
            let log_ref = match self.reference {
                Reference::Uniform => 0.0,
                Reference::Surrogate(r) => r.log_density(&z)?,
            };
            loss -= w * (log_ref + log_det);
        }
        let penalty: f64 = coeffs.iter().map(|c| c * c).sum::<f64>() * self.l2;
        Ok(loss + penalty)
    }

    fn loss_and_grad(&self, coeffs: &[f64], grad: &mut [f64]) -> Result<f64> {
        let d = self.offsets.len();
        grad.fill(0.0);
        let mut z = vec![0.0; d];
        let mut loss = 0.0;
        let mut g_ld: Vec<Vec<f64>> = self
            .offsets
            .iter()
            .enumerate()
            .map(|(c, _)| vec![0.0; self.caches[0][c].num_coeffs()])
            .collect();
        let mut g_fw = g_ld.clone();
        for (k, per_point) in self.caches.iter().enumerate() {
            let w = self.rule.weight(k);
            let mut log_det = 0.0;
            for (c, cache) in per_point.iter().enumerate() {
                let seg = self.segment(coeffs, c);
                let (ld, s) = cache.gradients(seg, &mut g_ld[c], &mut g_fw[c]);
                log_det += ld;
                z[c] = s;
            }
            let (log_ref, grad_ref) = match self.reference {
                Reference::Uniform => (0.0, None),
                Reference::Surrogate(r) => {
                    (r.log_density(&z)?, Some(r.grad_log_density(&z)?))
                }
            };
            loss -= w * (log_ref + log_det);
            for c in 0..d {
                let off = self.offsets[c];
                let chain = grad_ref.as_ref().map_or(0.0, |g| g[c]);
                for (i, (gl, gf)) in g_ld[c].iter().zip(&g_fw[c]).enumerate() {
                    grad[off + i] -= w * (gl + chain * gf);
                }
            }
        }
        let mut penalty = 0.0;
        for (g, c) in grad.iter_mut().zip(coeffs) {
            penalty += self.l2 * c * c;
            *g += 2.0 * self.l2 * c;
        }
        Ok(loss + penalty)
    }

    fn segment<'b>(&self, coeffs: &'b [f64], c: usize) -> &'b [f64] {
        let start = self.offsets[c];
        let end = if c + 1 < self.offsets.len() {
            self.offsets[c + 1]
        } else {
            self.n_params
        };
        &coeffs[start..end]
    }
}

/// Cross-entropy loss of a map's current coefficients against a rule.
pub fn loss(
    map: &TriangularMap,
    reference: &Reference,
    rule: &QuadratureRule,
    l2: f64,
) -> Result<f64> {
    Workspace::new(map, reference, rule, l2)?.loss_only(&map.coeffs_flat())
}

/// Loss and its gradient with respect to the flat coefficient vector.
pub fn loss_gradient(
    map: &TriangularMap,
    reference: &Reference,
    rule: &QuadratureRule,
    l2: f64,
) -> Result<(f64, Vec<f64>)> {
    let ws = Workspace::new(map, reference, rule, l2)?;
    let coeffs = map.coeffs_flat();
    let mut grad = vec![0.0; coeffs.len()];
    let value = ws.loss_and_grad(&coeffs, &mut grad)?;
    Ok((value, grad))
}

/// Fits a fresh map from the family to the rule and wraps it over the
/// reference as a new surrogate.
pub fn fit(
    family: MapFamily,
    reference: Reference,
    rule: &QuadratureRule,
    config: &FitConfig,
) -> Result<(Surrogate, FitReport)> {
    let mut map = family.instantiate()?;
    let ws = Workspace::new(&map, &reference, rule, config.l2)?;
    let n = map.param_count();
    let mut coeffs = vec![0.0; n];
    let mut velocity = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut lookahead = vec![0.0; n];

    let initial_loss = ws.loss_only(&coeffs)?;
    let mut last_loss = initial_loss;
    for iter in 0..config.steps {
        for i in 0..n {
            lookahead[i] = coeffs[i] + config.momentum * velocity[i];
        }
        let value = ws.loss_and_grad(&lookahead, &mut grad)?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::FitAborted {
                iteration: iter,
                detail: format!("non-finite loss or gradient (loss {value})"),
            });
        }
        for i in 0..n {
            velocity[i] = config.momentum * velocity[i] - config.learning_rate * grad[i];
            coeffs[i] += velocity[i];
        }
        last_loss = value;
    }
    map.set_coeffs_flat(&coeffs)?;
    let final_loss = ws.loss_only(&coeffs)?;
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let report = FitReport {
        iterations: config.steps,
        initial_loss,
        final_loss: if config.steps == 0 { last_loss } else { final_loss },
        grad_norm,
    };
    Ok((Surrogate::new(map, reference)?, report))
}
