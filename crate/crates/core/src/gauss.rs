//! Gauss–Legendre quadrature nodes and weights.

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[0, 1]`.
///
/// Computed by Newton iteration on the Legendre polynomial with the usual
/// Chebyshev initial guesses; accurate to machine precision for the orders
/// used here (up to ~60).
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Roots come out in decreasing order of cos; order does not matter
        // for integration but we keep them increasing on [0,1].
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = 0.5 * (x + 1.0);
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// Legendre `P_n(x)` and its derivative on `[-1, 1]` by the three-term
/// recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Tensorized Gauss–Legendre rule on `[0,1]^d`, `order` nodes per dimension,
/// returned as flat row-major points and product weights.
pub fn tensor_gauss_legendre(d: usize, order: usize) -> (Vec<f64>, Vec<f64>) {
    let (nodes, w1) = gauss_legendre_unit(order);
    let total = order.pow(d as u32);
    let mut points = Vec::with_capacity(total * d);
    let mut weights = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut w = 1.0;
        for _ in 0..d {
            let idx = rem % order;
            rem /= order;
            points.push(nodes[idx]);
            w *= w1[idx];
        }
        weights.push(w);
    }
    (points, weights)
}
