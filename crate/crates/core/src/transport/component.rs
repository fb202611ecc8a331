//! One monotone component of a triangular map.
//!
//! The component's density factor is `f(θ) = r(Σ_α c_α Ψ_α(θ))` with the
//! softplus rectifier `r(t) = log(1 + exp(t))` and `Ψ_α` the derivative-form
//! tensor basis: shifted Legendre values in the prefix coordinates times the
//! derivative of a shifted Legendre polynomial in the last coordinate. The
//! component output is the normalized partial integral
//! `S(θ) = I(θ_last) / I(1)` with `I(s) = ∫_0^s f(θ_prefix, t) dt`.

use crate::error::{Error, Result};
use crate::gauss::gauss_legendre_unit;

use super::legendre::LegendreTable;
use super::multi_index::MultiIndexSet;

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Absolute tolerance for the scalar inverse solve.
const INVERT_TOL: f64 = 1e-10;
const INVERT_MAX_ITER: usize = 100;

#[derive(Clone, Debug)]
pub struct MapComponent {
    indices: MultiIndexSet,
    coeffs: Vec<f64>,
    quad_nodes: Vec<f64>,
    quad_weights: Vec<f64>,
}

impl MapComponent {
    /// A component on `dim` inputs with total-order-`order` basis and the
    /// given number of univariate quadrature nodes.
    pub fn new(dim: usize, order: usize, quadrature_order: usize) -> Result<MapComponent> {
        if quadrature_order == 0 {
            return Err(Error::contract("quadrature order must be >= 1"));
        }
        let indices = MultiIndexSet::total_order(dim, order)?;
        let (quad_nodes, quad_weights) = gauss_legendre_unit(quadrature_order);
        let n = indices.len();
        Ok(MapComponent {
            indices,
            coeffs: vec![0.0; n],
            quad_nodes,
            quad_weights,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.indices.dim()
    }

    pub fn order(&self) -> usize {
        self.indices.order()
    }

    pub fn num_coeffs(&self) -> usize {
        self.indices.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn set_coeffs(&mut self, coeffs: &[f64]) -> Result<()> {
        if coeffs.len() != self.coeffs.len() {
            return Err(Error::contract(format!(
                "expected {} coefficients, got {}",
                self.coeffs.len(),
                coeffs.len()
            )));
        }
        self.coeffs.copy_from_slice(coeffs);
        Ok(())
    }

    pub fn quadrature_order(&self) -> usize {
        self.quad_nodes.len()
    }

    fn check_domain(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.input_dim() {
            return Err(Error::contract(format!(
                "component takes {} inputs, got {}",
                self.input_dim(),
                theta.len()
            )));
        }
        if theta.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::contract("point outside [0,1]^d"));
        }
        Ok(())
    }

    /// Per-index products over the prefix coordinates; `diff` optionally
    /// differentiates one prefix coordinate.
    fn prefix_products(&self, prefix: &[f64], diff: Option<usize>) -> Vec<f64> {
        let order = self.order();
        let tabs: Vec<LegendreTable> = prefix
            .iter()
            .map(|&x| LegendreTable::eval(order, x))
            .collect();
        self.indices
            .iter()
            .map(|alpha| {
                let mut prod = 1.0;
                for (j, tab) in tabs.iter().enumerate() {
                    let arr = if diff == Some(j) { &tab.d1 } else { &tab.vals };
                    prod *= arr[alpha[j]];
                }
                prod
            })
            .collect()
    }

    /// Basis row at `(prefix, t)`: prefix products times the last-coordinate
    /// derivative (or second derivative when `diff_last`).
    fn row_from_products(&self, products: &[f64], t: f64, diff_last: bool, out: &mut [f64]) {
        let tab = LegendreTable::eval(self.order(), t);
        let arr = if diff_last { &tab.d2 } else { &tab.d1 };
        for ((slot, alpha), prod) in out.iter_mut().zip(self.indices.iter()).zip(products) {
            *slot = prod * arr[*alpha.last().unwrap()];
        }
    }

    /// Evaluates the derivative-form tensor basis at a point in the cube.
    pub fn basis_row_at(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(theta)?;
        let (prefix, last) = theta.split_at(theta.len() - 1);
        let products = self.prefix_products(prefix, None);
        let mut out = vec![0.0; self.num_coeffs()];
        self.row_from_products(&products, last[0], false, &mut out);
        Ok(out)
    }

    /// Precomputed geometry for one evaluation point, reusable across
    /// coefficient updates during fitting.
    pub fn point_cache(&self, theta: &[f64]) -> Result<PointCache> {
        self.check_domain(theta)?;
        let (prefix, last) = theta.split_at(theta.len() - 1);
        let s = last[0];
        let products = self.prefix_products(prefix, None);
        let p = self.num_coeffs();
        let nq = self.quad_nodes.len();

        let mut row_theta = vec![0.0; p];
        self.row_from_products(&products, s, false, &mut row_theta);

        let mut rows_s = vec![0.0; nq * p];
        let mut w_s = vec![0.0; nq];
        let mut rows_one = vec![0.0; nq * p];
        let mut w_one = vec![0.0; nq];
        for i in 0..nq {
            let x = self.quad_nodes[i];
            self.row_from_products(&products, s * x, false, &mut rows_s[i * p..(i + 1) * p]);
            w_s[i] = self.quad_weights[i] * s;
            self.row_from_products(&products, x, false, &mut rows_one[i * p..(i + 1) * p]);
            w_one[i] = self.quad_weights[i];
        }
        Ok(PointCache {
            row_theta,
            rows_s,
            w_s,
            rows_one,
            w_one,
            p,
        })
    }

    /// Normalized partial integral `S(θ) = I(θ_last)/I(1)`.
    pub fn forward(&self, theta: &[f64]) -> Result<f64> {
        let cache = self.point_cache(theta)?;
        let (_, s) = cache.log_det_and_forward(&self.coeffs);
        Ok(s)
    }

    /// `log ∂_last S = log f(θ) - log I(1)`.
    pub fn log_det_term(&self, theta: &[f64]) -> Result<f64> {
        let cache = self.point_cache(theta)?;
        let (ld, _) = cache.log_det_and_forward(&self.coeffs);
        Ok(ld)
    }

    /// Solves `S(prefix, x) = z` for `x` by safeguarded Newton iteration on
    /// the bracketed monotone function.
    pub fn inverse(&self, prefix: &[f64], z: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&z) {
            return Err(Error::contract("inverse target outside [0,1]"));
        }
        if prefix.len() != self.input_dim() - 1 {
            return Err(Error::contract("inverse prefix has wrong length"));
        }
        if z == 0.0 {
            return Ok(0.0);
        }
        if z == 1.0 {
            return Ok(1.0);
        }
        let products = self.prefix_products(prefix, None);
        let p = self.num_coeffs();
        let mut row = vec![0.0; p];

        let mut integrand = |t: f64| -> f64 {
            self.row_from_products(&products, t, false, &mut row);
            let dot: f64 = row.iter().zip(&self.coeffs).map(|(r, c)| r * c).sum();
            softplus(dot)
        };
        let integral = |f: &mut dyn FnMut(f64) -> f64, s: f64, nodes: &[f64], w: &[f64]| -> f64 {
            nodes
                .iter()
                .zip(w)
                .map(|(&x, &wi)| wi * s * f(s * x))
                .sum()
        };
        let nodes = self.quad_nodes.clone();
        let weights = self.quad_weights.clone();
        let i_one = integral(&mut integrand, 1.0, &nodes, &weights);
        if !(i_one > 0.0) || !i_one.is_finite() {
            return Err(Error::invariant("component normalizer is not positive"));
        }

        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut x = z;
        for _ in 0..INVERT_MAX_ITER {
            let s_val = integral(&mut integrand, x, &nodes, &weights) / i_one;
            let err = s_val - z;
            if err > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            if err == 0.0 || hi - lo < INVERT_TOL {
                return Ok(x.clamp(lo, hi));
            }
            let slope = integrand(x) / i_one;
            let mut next = x - err / slope;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            x = next;
        }
        Ok(0.5 * (lo + hi))
    }

    /// Spatial gradient of `log ∂_last S` with respect to all inputs.
    pub fn spatial_grad_log_det(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(theta)?;
        let dprime = self.input_dim();
        let (prefix, last) = theta.split_at(dprime - 1);
        let s = last[0];
        let p = self.num_coeffs();
        let products = self.prefix_products(prefix, None);

        let mut row = vec![0.0; p];
        self.row_from_products(&products, s, false, &mut row);
        let fhat: f64 = row.iter().zip(&self.coeffs).map(|(r, c)| r * c).sum();
        let f = softplus(fhat);
        let sig = sigmoid(fhat);

        let i_one = self.integral_with(&products, 1.0, false);

        let mut grad = vec![0.0; dprime];
        // Last coordinate: I(1) does not depend on θ_last.
        let mut row2 = vec![0.0; p];
        self.row_from_products(&products, s, true, &mut row2);
        let dfhat_last: f64 = row2.iter().zip(&self.coeffs).map(|(r, c)| r * c).sum();
        grad[dprime - 1] = sig * dfhat_last / f;

        for i in 0..dprime - 1 {
            let products_i = self.prefix_products(prefix, Some(i));
            let mut row_i = vec![0.0; p];
            self.row_from_products(&products_i, s, false, &mut row_i);
            let dfhat_i: f64 = row_i.iter().zip(&self.coeffs).map(|(r, c)| r * c).sum();
            let df_i = sig * dfhat_i;
            let di_one = self.integral_sigma_with(&products_i, 1.0, &products);
            grad[i] = df_i / f - di_one / i_one;
        }
        Ok(grad)
    }

    /// Row of the map Jacobian: `∂_i S` for every input `i`.
    pub fn spatial_grad_forward(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(theta)?;
        let dprime = self.input_dim();
        let (prefix, last) = theta.split_at(dprime - 1);
        let s = last[0];
        let products = self.prefix_products(prefix, None);

        let i_s = self.integral_with(&products, s, false);
        let i_one = self.integral_with(&products, 1.0, false);
        let s_val = i_s / i_one;

        let mut grad = vec![0.0; dprime];
        let p = self.num_coeffs();
        let mut row = vec![0.0; p];
        self.row_from_products(&products, s, false, &mut row);
        let fhat: f64 = row.iter().zip(&self.coeffs).map(|(r, c)| r * c).sum();
        grad[dprime - 1] = softplus(fhat) / i_one;

        for i in 0..dprime - 1 {
            let products_i = self.prefix_products(prefix, Some(i));
            let di_s = self.integral_sigma_scaled(&products_i, &products, s);
            let di_one = self.integral_sigma_scaled(&products_i, &products, 1.0);
            grad[i] = (di_s - s_val * di_one) / i_one;
        }
        Ok(grad)
    }

    /// `∫_0^s f` using precomputed prefix products.
    fn integral_with(&self, products: &[f64], s: f64, diff_last: bool) -> f64 {
        let p = self.num_coeffs();
        let mut row = vec![0.0; p];
        self.quad_nodes
            .iter()
            .zip(&self.quad_weights)
            .map(|(&x, &w)| {
                self.row_from_products(products, s * x, diff_last, &mut row);
                let dot: f64 = row.iter().zip(&self.coeffs).map(|(r, c)| r * c).sum();
                w * s * softplus(dot)
            })
            .sum()
    }

    /// `∫_0^1 σ(f̂') * basis(products_diff)`: the derivative of `I(1)` when a
    /// prefix coordinate is perturbed.
    fn integral_sigma_with(&self, products_diff: &[f64], s: f64, products: &[f64]) -> f64 {
        self.integral_sigma_scaled(products_diff, products, s)
    }

    fn integral_sigma_scaled(&self, products_diff: &[f64], products: &[f64], s: f64) -> f64 {
        let p = self.num_coeffs();
        let mut row = vec![0.0; p];
        let mut row_d = vec![0.0; p];
        self.quad_nodes
            .iter()
            .zip(&self.quad_weights)
            .map(|(&x, &w)| {
                let t = s * x;
                self.row_from_products(products, t, false, &mut row);
                self.row_from_products(products_diff, t, false, &mut row_d);
                let fhat: f64 = row.iter().zip(&self.coeffs).map(|(r, c)| r * c).sum();
                let dfhat: f64 = row_d.iter().zip(&self.coeffs).map(|(r, c)| r * c).sum();
                w * s * sigmoid(fhat) * dfhat
            })
            .sum()
    }
}

/// Geometry of one evaluation point: basis rows at the point itself and at
/// the quadrature nodes of both partial integrals. Everything here is
/// independent of the coefficients, so fitting reuses one cache per point.
#[derive(Clone, Debug)]
pub struct PointCache {
    row_theta: Vec<f64>,
    rows_s: Vec<f64>,
    w_s: Vec<f64>,
    rows_one: Vec<f64>,
    w_one: Vec<f64>,
    p: usize,
}

impl PointCache {
    pub fn num_coeffs(&self) -> usize {
        self.p
    }

    fn dot(row: &[f64], c: &[f64]) -> f64 {
        row.iter().zip(c).map(|(r, ci)| r * ci).sum()
    }

    /// `(log ∂_last S, S)` for the given coefficients.
    pub fn log_det_and_forward(&self, c: &[f64]) -> (f64, f64) {
        let f = softplus(Self::dot(&self.row_theta, c));
        let mut i_s = 0.0;
        for (i, w) in self.w_s.iter().enumerate() {
            i_s += w * softplus(Self::dot(&self.rows_s[i * self.p..(i + 1) * self.p], c));
        }
        let mut i_one = 0.0;
        for (i, w) in self.w_one.iter().enumerate() {
            i_one += w * softplus(Self::dot(&self.rows_one[i * self.p..(i + 1) * self.p], c));
        }
        (f.ln() - i_one.ln(), (i_s / i_one).clamp(0.0, 1.0))
    }

    /// Coefficient gradients of the log-determinant term and of `S` itself.
    ///
    /// Returns `(log_det, S)` and fills `g_log_det` and `g_forward`, each of
    /// length `num_coeffs`.
    pub fn gradients(
        &self,
        c: &[f64],
        g_log_det: &mut [f64],
        g_forward: &mut [f64],
    ) -> (f64, f64) {
        let p = self.p;
        debug_assert_eq!(g_log_det.len(), p);
        debug_assert_eq!(g_forward.len(), p);

        let fhat = Self::dot(&self.row_theta, c);
        let f = softplus(fhat);
        let sig = sigmoid(fhat);

        let mut i_s = 0.0;
        let mut gi_s = vec![0.0; p];
        for (i, w) in self.w_s.iter().enumerate() {
            let row = &self.rows_s[i * p..(i + 1) * p];
            let dot = Self::dot(row, c);
            i_s += w * softplus(dot);
            let scale = w * sigmoid(dot);
            for (g, r) in gi_s.iter_mut().zip(row) {
                *g += scale * r;
            }
        }
        let mut i_one = 0.0;
        let mut gi_one = vec![0.0; p];
        for (i, w) in self.w_one.iter().enumerate() {
            let row = &self.rows_one[i * p..(i + 1) * p];
            let dot = Self::dot(row, c);
            i_one += w * softplus(dot);
            let scale = w * sigmoid(dot);
            for (g, r) in gi_one.iter_mut().zip(row) {
                *g += scale * r;
            }
        }

        let s_val = i_s / i_one;
        for k in 0..p {
            g_log_det[k] = sig * self.row_theta[k] / f - gi_one[k] / i_one;
            g_forward[k] = (gi_s[k] - s_val * gi_one[k]) / i_one;
        }
        (f.ln() - i_one.ln(), s_val.clamp(0.0, 1.0))
    }
}
