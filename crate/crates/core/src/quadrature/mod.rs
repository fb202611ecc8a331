//! Quadrature rules on the unit hypercube.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

mod sobol;

pub use sobol::{ScrambledSobol, MAX_DIMENSION};

/// A weighted point set on `[0,1]^d`: the universal currency between the
/// quadrature, transport, and importance-sampling modules.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    points: Vec<f64>,
    weights: Vec<f64>,
    d: usize,
    normalized: bool,
}

impl QuadratureRule {
    /// Builds a rule from flat row-major points (`n * d` entries) and `n`
    /// weights, validating the type invariants.
    pub fn new(points: Vec<f64>, weights: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::contract("dimension must be at least 1"));
        }
        if weights.is_empty() || points.len() != weights.len() * d {
            return Err(Error::contract(format!(
                "points/weights shape mismatch: {} coords, {} weights, d={}",
                points.len(),
                weights.len(),
                d
            )));
        }
        if points.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::contract("point coordinate outside [0,1]"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::contract("weights must be finite and non-negative"));
        }
        let sum: f64 = weights.iter().sum();
        let normalized = (sum - 1.0).abs() <= 1e-12;
        Ok(QuadratureRule {
            points,
            weights,
            d,
            normalized,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.d..(k + 1) * self.d]
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points
            .chunks_exact(self.d)
            .zip(self.weights.iter().copied())
    }

    /// Rescales weights to unit sum. Points are unchanged.
    pub fn normalize(&self) -> Result<QuadratureRule> {
        let sum: f64 = self.weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::DegenerateRule(format!(
                "weight sum {sum} is not positive and finite"
            )));
        }
        let weights: Vec<f64> = self.weights.iter().map(|w| w / sum).collect();
        Ok(QuadratureRule {
            points: self.points.clone(),
            weights,
            d: self.d,
            normalized: true,
        })
    }

    /// Relative effective sample size `(N * sum w^2)^-1`, in `[1/N, 1]`.
    pub fn ress(&self) -> Result<f64> {
        if !self.normalized {
            return Err(Error::contract("ress requires a normalized rule"));
        }
        let sq: f64 = self.weights.iter().map(|w| w * w).sum();
        Ok(1.0 / (self.len() as f64 * sq))
    }

    /// Replaces the points of this rule, keeping weights. Used for
    /// transporting abscissae through a map; the new points must have the
    /// same shape and stay in the cube.
    pub fn with_points(&self, points: Vec<f64>) -> Result<QuadratureRule> {
        if points.len() != self.points.len() {
            return Err(Error::contract("replacement points have wrong length"));
        }
        QuadratureRule::new(points, self.weights.clone(), self.d)
    }

    /// Writes the rule as plain columns: one `x_1 ... x_d w` row per point.
    pub fn write_columns<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (p, w) in self.iter() {
            for x in p {
                write!(out, "{x} ")?;
            }
            writeln!(out, "{w}")?;
        }
        Ok(())
    }

    /// Reads a rule back from the columnar format.
    pub fn read_columns<R: BufRead>(reader: R, d: usize) -> Result<QuadratureRule> {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for line in reader.lines() {
            let line = line.map_err(|e| Error::contract(format!("read failure: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::contract(format!("bad number in rule file: {e}")))?;
            if vals.len() != d + 1 {
                return Err(Error::contract(format!(
                    "expected {} columns, found {}",
                    d + 1,
                    vals.len()
                )));
            }
            points.extend_from_slice(&vals[..d]);
            weights.push(vals[d]);
        }
        QuadratureRule::new(points, weights, d)
    }
}

/// Smallest prime strictly greater than `d`.
fn next_prime(d: usize) -> usize {
    let is_prime = |n: usize| n >= 2 && (2..).take_while(|k| k * k <= n).all(|k| n % k != 0);
    (d + 1..).find(|&n| is_prime(n)).unwrap()
}

/// Randomized QMC rule: `n` equal-weight points taken from the first `b^p`
/// points of an Owen-scrambled Sobol' sequence, where `b` is the smallest
/// prime exceeding `d` and `p` the smallest power with `b^p > n`.
pub fn rqmc_rule(d: usize, n: usize, seed: u64) -> Result<QuadratureRule> {
    if d == 0 || n == 0 {
        return Err(Error::contract("rqmc_rule requires d >= 1 and n >= 1"));
    }
    if d > MAX_DIMENSION {
        return Err(Error::Capability(format!(
            "dimension {d} exceeds the direction-number table (max {MAX_DIMENSION})"
        )));
    }
    // The base/padding rule fixes how many candidate points exist; we only
    // ever consume the first n of them, so generating those n suffices.
    let b = next_prime(d);
    let mut pool = b;
    while pool <= n {
        pool *= b;
    }
    debug_assert!(pool > n);
    let gen = ScrambledSobol::new(d, seed);
    let mut points = vec![0.0; n * d];
    for i in 0..n {
        gen.point_into(i as u32, &mut points[i * d..(i + 1) * d]);
    }
    let w = 1.0 / n as f64;
    QuadratureRule::new(points, vec![w; n], d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rqmc_basic_shape() {
        let r = rqmc_rule(2, 25, 7).unwrap();
        assert_eq!(r.len(), 25);
        assert_eq!(r.dim(), 2);
        assert!(r.is_normalized());
        for (_, w) in r.iter() {
            assert_relative_eq!(w, 0.04);
        }
    }

    #[test]
    fn rqmc_degenerate_single_point() {
        let r = rqmc_rule(1, 1, 3).unwrap();
        assert_eq!(r.len(), 1);
        assert!(r.point(0)[0] > 0.0 && r.point(0)[0] < 1.0);
        assert_relative_eq!(r.weight(0), 1.0);
    }

    #[test]
    fn rqmc_rejects_large_dimension() {
        assert!(matches!(rqmc_rule(21, 8, 0), Err(Error::Capability(_))));
    }

    #[test]
    fn rqmc_deterministic_and_seed_sensitive() {
        let a = rqmc_rule(3, 64, 11).unwrap();
        let b = rqmc_rule(3, 64, 11).unwrap();
        let c = rqmc_rule(3, 64, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rqmc_prefix_property_at_fixed_padding() {
        // n=25 and n=20 both pad to 3^3 = 27 candidates in d=2, so the
        // shorter rule is a prefix of the longer one.
        let long = rqmc_rule(2, 25, 5).unwrap();
        let short = rqmc_rule(2, 20, 5).unwrap();
        for k in 0..short.len() {
            assert_eq!(short.point(k), long.point(k));
        }
    }

    #[test]
    fn rqmc_mean_close_to_half() {
        let r = rqmc_rule(2, 256, 42).unwrap();
        for j in 0..2 {
            let mean: f64 = (0..r.len()).map(|k| r.point(k)[j]).sum::<f64>() / 256.0;
            assert!((mean - 0.5).abs() < 0.01, "dim {j} mean {mean}");
        }
    }

    /// Exact star discrepancy in 2D by scanning candidate corner boxes.
    fn star_discrepancy_2d(pts: &[(f64, f64)]) -> f64 {
        let n = pts.len() as f64;
        let mut xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let mut ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        xs.push(1.0);
        ys.push(1.0);
        let mut worst: f64 = 0.0;
        for &x in &xs {
            for &y in &ys {
                let inside = pts.iter().filter(|p| p.0 < x && p.1 < y).count() as f64;
                let closed = pts.iter().filter(|p| p.0 <= x && p.1 <= y).count() as f64;
                worst = worst.max((x * y - inside / n).abs());
                worst = worst.max((closed / n - x * y).abs());
            }
        }
        worst
    }

    #[test]
    fn rqmc_beats_pseudorandom_discrepancy() {
        use rand::{Rng, SeedableRng};
        let r = rqmc_rule(2, 256, 9).unwrap();
        let qmc: Vec<(f64, f64)> = (0..r.len()).map(|k| (r.point(k)[0], r.point(k)[1])).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mc: Vec<(f64, f64)> = (0..256).map(|_| (rng.gen(), rng.gen())).collect();
        let d_qmc = star_discrepancy_2d(&qmc);
        let d_mc = star_discrepancy_2d(&mc);
        assert!(d_qmc < d_mc, "qmc {d_qmc} vs mc {d_mc}");
    }

    #[test]
    fn ress_examples() {
        let uniform = QuadratureRule::new(vec![0.1, 0.2, 0.3, 0.4], vec![0.25; 4], 1).unwrap();
        assert_relative_eq!(uniform.ress().unwrap(), 1.0);

        let onehot = QuadratureRule::new(vec![0.1, 0.2, 0.3, 0.4], vec![1.0, 0.0, 0.0, 0.0], 1)
            .unwrap();
        assert_relative_eq!(onehot.ress().unwrap(), 0.25);

        let skew = QuadratureRule::new(vec![0.1, 0.9], vec![0.7, 0.3], 1).unwrap();
        // (N * ||w||^2)^-1 = 1 / (2 * 0.58)
        assert_relative_eq!(skew.ress().unwrap(), 1.0 / 1.16, epsilon = 1e-12);
    }

    #[test]
    fn ress_rejects_unnormalized() {
        let r = QuadratureRule::new(vec![0.1, 0.9], vec![2.0, 2.0], 1).unwrap();
        assert!(r.ress().is_err());
    }

    #[test]
    fn normalize_examples() {
        let r = QuadratureRule::new(vec![0.1, 0.9], vec![2.0, 2.0], 1).unwrap();
        let n = r.normalize().unwrap();
        assert_eq!(n.weights(), &[0.5, 0.5]);
        assert!(n.is_normalized());

        let again = n.normalize().unwrap();
        assert_eq!(again, n);

        let r = QuadratureRule::new(vec![0.1, 0.9], vec![1.0, 3.0], 1).unwrap();
        assert_eq!(r.normalize().unwrap().weights(), &[0.25, 0.75]);
    }

    #[test]
    fn normalize_rejects_zero_sum() {
        let r = QuadratureRule::new(vec![0.1, 0.9], vec![0.0, 0.0], 1).unwrap();
        assert!(matches!(r.normalize(), Err(Error::DegenerateRule(_))));
    }

    #[test]
    fn columnar_round_trip() {
        let r = rqmc_rule(2, 16, 4).unwrap();
        let mut buf = Vec::new();
        r.write_columns(&mut buf).unwrap();
        let back = QuadratureRule::read_columns(buf.as_slice(), 2).unwrap();
        assert_eq!(back, r);
    }
}
