//! Monotone triangular transport maps and pullback surrogate densities.
//!
//! A [`TriangularMap`] sends `[0,1]^d` to itself; component `k` depends on
//! the first `k+1` inputs and is strictly increasing in the last of them. A
//! [`Surrogate`] couples a map with a reference density (uniform, or another
//! surrogate, which is how annealing stages compose) and exposes the pullback
//! density, its gradients, exact sampling, and quadrature transport.

use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;

pub mod component;
pub mod legendre;
pub mod multi_index;

pub use component::{MapComponent, PointCache};
pub use multi_index::MultiIndexSet;

/// Lower-triangular monotone map on the unit cube.
#[derive(Clone, Debug)]
pub struct TriangularMap {
    components: Vec<MapComponent>,
}

impl TriangularMap {
    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[MapComponent] {
        &self.components
    }

    pub fn components_mut(&mut self) -> &mut [MapComponent] {
        &mut self.components
    }

    /// Total number of coefficients across all components.
    pub fn param_count(&self) -> usize {
        self.components.iter().map(|c| c.num_coeffs()).sum()
    }

    /// Concatenated coefficient vector, component by component.
    pub fn coeffs_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for c in &self.components {
            out.extend_from_slice(c.coeffs());
        }
        out
    }

    pub fn set_coeffs_flat(&mut self, coeffs: &[f64]) -> Result<()> {
        if coeffs.len() != self.param_count() {
            return Err(Error::contract(format!(
                "expected {} coefficients, got {}",
                self.param_count(),
                coeffs.len()
            )));
        }
        let mut offset = 0;
        for c in &mut self.components {
            let p = c.num_coeffs();
            c.set_coeffs(&coeffs[offset..offset + p])?;
            offset += p;
        }
        Ok(())
    }

    pub fn forward(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_point(theta)?;
        let mut z = Vec::with_capacity(self.dim());
        for (k, comp) in self.components.iter().enumerate() {
            z.push(comp.forward(&theta[..=k])?);
        }
        Ok(z)
    }

    /// Sum of the per-component log-derivative terms; the map Jacobian is
    /// triangular, so this is `log |det ∇S|`.
    pub fn log_det(&self, theta: &[f64]) -> Result<f64> {
        self.check_point(theta)?;
        let mut acc = 0.0;
        for (k, comp) in self.components.iter().enumerate() {
            acc += comp.log_det_term(&theta[..=k])?;
        }
        Ok(acc)
    }

    pub fn forward_with_log_det(&self, theta: &[f64]) -> Result<(Vec<f64>, f64)> {
        Ok((self.forward(theta)?, self.log_det(theta)?))
    }

    /// Inverts the map coordinate by coordinate.
    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_point(z)?;
        let mut theta: Vec<f64> = Vec::with_capacity(self.dim());
        for (k, comp) in self.components.iter().enumerate() {
            let prefix = theta.clone();
            theta.push(comp.inverse(&prefix, z[k])?);
            let _ = k;
        }
        Ok(theta)
    }

    /// Spatial gradient of `log |det ∇S|`.
    pub fn grad_log_det(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_point(theta)?;
        let mut grad = vec![0.0; self.dim()];
        for (k, comp) in self.components.iter().enumerate() {
            let g = comp.spatial_grad_log_det(&theta[..=k])?;
            for (slot, gi) in grad.iter_mut().zip(g) {
                *slot += gi;
            }
        }
        Ok(grad)
    }

    /// Lower-triangular Jacobian, row-major `d x d` with zeros above the
    /// diagonal.
    pub fn jacobian(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_point(theta)?;
        let d = self.dim();
        let mut jac = vec![0.0; d * d];
        for (k, comp) in self.components.iter().enumerate() {
            let row = comp.spatial_grad_forward(&theta[..=k])?;
            jac[k * d..k * d + row.len()].copy_from_slice(&row);
        }
        Ok(jac)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::contract(format!(
                "expected a point of dimension {}, got {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(())
    }
}

/// Shape parameters of a map: dimension, total order, and the univariate
/// quadrature order used inside each component.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MapFamily {
    pub d: usize,
    pub order: usize,
    pub quadrature_order: usize,
}

impl MapFamily {
    /// Family with the default quadrature order: enough nodes that the
    /// rectified integrand is resolved far below the tolerances used
    /// downstream, even for sharply varying coefficient vectors.
    pub fn new(d: usize, order: usize) -> MapFamily {
        MapFamily {
            d,
            order,
            quadrature_order: (2 * order + 4).max(32),
        }
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.instantiate()?.param_count())
    }

    /// Fresh map with all coefficients zero; this is the identity map.
    pub fn instantiate(&self) -> Result<TriangularMap> {
        if self.d == 0 {
            return Err(Error::contract("map dimension must be >= 1"));
        }
        let components = (1..=self.d)
            .map(|k| MapComponent::new(k, self.order, self.quadrature_order))
            .collect::<Result<Vec<_>>>()?;
        Ok(TriangularMap { components })
    }
}

/// Reference density a map is pulled back through.
#[derive(Clone, Debug)]
pub enum Reference {
    /// Uniform density on the cube.
    Uniform,
    /// Another surrogate; composition chains arise from annealing across
    /// fidelities.
    Surrogate(Arc<Surrogate>),
}

/// A normalized density on `[0,1]^d`: the pullback of a reference density
/// through a triangular map.
#[derive(Clone, Debug)]
pub struct Surrogate {
    map: TriangularMap,
    reference: Reference,
}

impl Surrogate {
    pub fn new(map: TriangularMap, reference: Reference) -> Result<Surrogate> {
        if let Reference::Surrogate(r) = &reference {
            if r.dim() != map.dim() {
                return Err(Error::contract(
                    "reference surrogate dimension does not match the map",
                ));
            }
        }
        Ok(Surrogate { map, reference })
    }

    /// The uniform density itself: identity map over a uniform reference.
    pub fn uniform(d: usize, order: usize) -> Result<Surrogate> {
        Surrogate::new(MapFamily::new(d, order).instantiate()?, Reference::Uniform)
    }

    pub fn dim(&self) -> usize {
        self.map.dim()
    }

    pub fn map(&self) -> &TriangularMap {
        &self.map
    }

    pub fn map_mut(&mut self) -> &mut TriangularMap {
        &mut self.map
    }

    pub fn reference(&self) -> &Reference {
        &self.reference
    }

    /// Number of maps in the composition chain.
    pub fn depth(&self) -> usize {
        match &self.reference {
            Reference::Uniform => 1,
            Reference::Surrogate(r) => 1 + r.depth(),
        }
    }

    /// Log pullback density. Points outside the cube get `-inf` rather than
    /// an error so importance weights vanish gracefully.
    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.dim() {
            return Err(Error::contract("log_density point has wrong dimension"));
        }
        if theta.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Ok(f64::NEG_INFINITY);
        }
        let (z, log_det) = self.map.forward_with_log_det(theta)?;
        let log_ref = match &self.reference {
            Reference::Uniform => 0.0,
            Reference::Surrogate(r) => r.log_density(&z)?,
        };
        Ok(log_ref + log_det)
    }

    /// Spatial gradient of the log pullback density (interior points only).
    pub fn grad_log_density(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let mut grad = self.map.grad_log_det(theta)?;
        if let Reference::Surrogate(r) = &self.reference {
            let z = self.map.forward(theta)?;
            let gz = r.grad_log_density(&z)?;
            let jac = self.map.jacobian(theta)?;
            let d = self.dim();
            for i in 0..d {
                for (k, gzk) in gz.iter().enumerate() {
                    grad[i] += jac[k * d + i] * gzk;
                }
            }
        }
        Ok(grad)
    }

    /// Pushes a point all the way to the innermost (uniform) reference space.
    pub fn base_forward(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let z = self.map.forward(theta)?;
        match &self.reference {
            Reference::Uniform => Ok(z),
            Reference::Surrogate(r) => r.base_forward(&z),
        }
    }

    /// Pulls a uniform-space point back through the whole chain.
    pub fn base_inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mid = match &self.reference {
            Reference::Uniform => z.to_vec(),
            Reference::Surrogate(r) => r.base_inverse(z)?,
        };
        self.map.inverse(&mid)
    }

    /// Exact i.i.d.-style sampling by inverting uniform draws; flat
    /// row-major output.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n * d);
        let mut z = vec![0.0; d];
        for _ in 0..n {
            for zi in z.iter_mut() {
                *zi = rng.gen::<f64>();
            }
            out.extend_from_slice(&self.base_inverse(&z)?);
        }
        Ok(out)
    }

    /// Transports a rule on the uniform reference space into a rule whose
    /// points follow this surrogate; weights are unchanged.
    pub fn pullback_quadrature(&self, base: &QuadratureRule) -> Result<QuadratureRule> {
        if base.dim() != self.dim() {
            return Err(Error::contract("base rule dimension mismatch"));
        }
        let d = self.dim();
        let mut points = Vec::with_capacity(base.len() * d);
        for (z, _) in base.iter() {
            points.extend_from_slice(&self.base_inverse(z)?);
        }
        base.with_points(points)
    }

    /// Versioned plain-text serialization; coefficients round-trip exactly.
    pub fn write_text<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "surrogate v1")?;
        let order = self.map.components()[0].order();
        let quad = self.map.components()[0].quadrature_order();
        writeln!(out, "map {} {} {}", self.dim(), order, quad)?;
        let coeffs = self.map.coeffs_flat();
        writeln!(out, "coeffs {}", coeffs.len())?;
        for c in &coeffs {
            writeln!(out, "{c}")?;
        }
        match &self.reference {
            Reference::Uniform => writeln!(out, "reference uniform")?,
            Reference::Surrogate(r) => {
                writeln!(out, "reference surrogate")?;
                r.write_text(out)?;
            }
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(reader: &mut R) -> Result<Surrogate> {
        let mut lines = reader.lines().map(|l| {
            l.map_err(|e| Error::contract(format!("surrogate read failure: {e}")))
        });
        Surrogate::read_from(&mut lines)
    }

    fn read_from<I>(lines: &mut I) -> Result<Surrogate>
    where
        I: Iterator<Item = Result<String>>,
    {
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::contract("truncated surrogate file"))?
        };
        let header = next()?;
        if header.trim() != "surrogate v1" {
            return Err(Error::contract(format!(
                "unsupported surrogate header: {header:?}"
            )));
        }
        let map_line = next()?;
        let parts: Vec<usize> = map_line
            .trim()
            .strip_prefix("map ")
            .ok_or_else(|| Error::contract("expected map line"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|e| Error::contract(format!("bad map line: {e}"))))
            .collect::<Result<_>>()?;
        if parts.len() != 3 {
            return Err(Error::contract("map line needs d, order, quad order"));
        }
        let family = MapFamily {
            d: parts[0],
            order: parts[1],
            quadrature_order: parts[2],
        };
        let mut map = family.instantiate()?;
        let count_line = next()?;
        let count: usize = count_line
            .trim()
            .strip_prefix("coeffs ")
            .ok_or_else(|| Error::contract("expected coeffs line"))?
            .parse()
            .map_err(|e| Error::contract(format!("bad coeff count: {e}")))?;
        if count != map.param_count() {
            return Err(Error::contract(format!(
                "coefficient count {count} does not match family ({})",
                map.param_count()
            )));
        }
        let mut coeffs = Vec::with_capacity(count);
        for _ in 0..count {
            let line = next()?;
            coeffs.push(
                line.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::contract(format!("bad coefficient: {e}")))?,
            );
        }
        map.set_coeffs_flat(&coeffs)?;
        let ref_line = next()?;
        let reference = match ref_line.trim() {
            "reference uniform" => Reference::Uniform,
            "reference surrogate" => {
                Reference::Surrogate(Arc::new(Surrogate::read_from(lines)?))
            }
            other => {
                return Err(Error::contract(format!(
                    "unknown reference kind: {other:?}"
                )))
            }
        };
        Surrogate::new(map, reference)
    }
}
