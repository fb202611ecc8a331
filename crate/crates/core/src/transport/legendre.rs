//! Shifted Legendre polynomials on `[0, 1]`.

/// Values and first two derivatives of the shifted Legendre polynomials
/// `P~_k(x) = P_k(2x - 1)` for `k = 0..=max`.
///
/// The three-term recurrence is stable to the orders used here (<= 13).
#[derive(Clone, Debug)]
pub struct LegendreTable {
    pub vals: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl LegendreTable {
    pub fn eval(max: usize, x: f64) -> LegendreTable {
        let t = 2.0 * x - 1.0;
        let n = max + 1;
        let mut vals = vec![0.0; n];
        let mut d1 = vec![0.0; n];
        let mut d2 = vec![0.0; n];
        vals[0] = 1.0;
        if n > 1 {
            vals[1] = t;
            d1[1] = 1.0;
        }
        for k in 1..max {
            let kf = k as f64;
            let a = (2.0 * kf + 1.0) / (kf + 1.0);
            let b = kf / (kf + 1.0);
            vals[k + 1] = a * t * vals[k] - b * vals[k - 1];
            d1[k + 1] = a * (vals[k] + t * d1[k]) - b * d1[k - 1];
            d2[k + 1] = a * (2.0 * d1[k] + t * d2[k]) - b * d2[k - 1];
        }
        // Chain rule for the [0,1] shift.
        for k in 0..n {
            d1[k] *= 2.0;
            d2[k] *= 4.0;
        }
        LegendreTable { vals, d1, d2 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn low_order_closed_forms() {
        let x = 0.3;
        let t = 2.0 * x - 1.0;
        let tab = LegendreTable::eval(3, x);
        assert_relative_eq!(tab.vals[0], 1.0);
        assert_relative_eq!(tab.vals[1], t);
        assert_relative_eq!(tab.vals[2], 0.5 * (3.0 * t * t - 1.0), epsilon = 1e-14);
        assert_relative_eq!(tab.vals[3], 0.5 * (5.0 * t * t * t - 3.0 * t), epsilon = 1e-14);
        assert_relative_eq!(tab.d1[2], 3.0 * t * 2.0, epsilon = 1e-14);
        assert_relative_eq!(tab.d2[2], 12.0, epsilon = 1e-14);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for &x in &[0.12, 0.5, 0.93] {
            let tab = LegendreTable::eval(9, x);
            let plus = LegendreTable::eval(9, x + h);
            let minus = LegendreTable::eval(9, x - h);
            for k in 0..=9 {
                let fd1 = (plus.vals[k] - minus.vals[k]) / (2.0 * h);
                assert_relative_eq!(tab.d1[k], fd1, epsilon = 1e-5, max_relative = 1e-5);
                let fd2 = (plus.d1[k] - minus.d1[k]) / (2.0 * h);
                assert_relative_eq!(tab.d2[k], fd2, epsilon = 1e-4, max_relative = 1e-4);
            }
        }
    }

    #[test]
    fn orthogonality_on_unit_interval() {
        let (nodes, weights) = crate::gauss::gauss_legendre_unit(20);
        for i in 0..6usize {
            for j in 0..6usize {
                let dot: f64 = nodes
                    .iter()
                    .zip(&weights)
                    .map(|(&x, &w)| {
                        let t = LegendreTable::eval(6, x);
                        w * t.vals[i] * t.vals[j]
                    })
                    .sum();
                let expect = if i == j { 1.0 / (2.0 * i as f64 + 1.0) } else { 0.0 };
                assert_relative_eq!(dot, expect, epsilon = 1e-12);
            }
        }
    }
}
