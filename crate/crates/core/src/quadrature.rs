//! One-dimensional quadrature rules shared by the wavenumber grid and the
//! kernel tables.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on [-1, 1], nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Gauss-Legendre rule over consecutive panels `edges[i]..edges[i+1]`.
pub fn composite_rule(edges: &[f64], order: usize) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gauss_legendre(order);
    let mut nodes = Vec::with_capacity((edges.len().saturating_sub(1)) * order);
    let mut weights = Vec::with_capacity(nodes.capacity());
    for pair in edges.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (x, w) in gx.iter().zip(&gw) {
            nodes.push(mid + half * x);
            weights.push(half * w);
        }
    }
    (nodes, weights)
}

/// Geometric panel edges from `lo` to `hi` with `per_decade` panels per factor of ten.
pub fn log_edges(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let panels = ((decades * per_decade as f64).ceil() as usize).max(1);
    let ratio = (hi / lo).powf(1.0 / panels as f64);
    let mut edges = Vec::with_capacity(panels + 1);
    let mut e = lo;
    for _ in 0..panels {
        edges.push(e);
        e *= ratio;
    }
    edges.push(hi);
    edges
}

/// Spherical Bessel functions j0, j1, j2 at `z >= 0`.
pub fn spherical_bessel_012(z: f64) -> (f64, f64, f64) {
    if z < 1.0 {
        // j_l(z) = z^l sum_k (-z^2/2)^k / (k! (2l + 2k + 1)!!)
        let h = -0.5 * z * z;
        let mut out = [0.0; 3];
        for (l, o) in out.iter_mut().enumerate() {
            let mut dfact = 1.0;
            for m in (1..=2 * l + 1).step_by(2) {
                dfact *= m as f64;
            }
            let mut term = 1.0 / dfact;
            let mut sum = term;
            for k in 1..12 {
                term *= h / (k as f64 * (2 * l + 2 * k + 1) as f64);
                sum += term;
            }
            *o = z.powi(l as i32) * sum;
        }
        (out[0], out[1], out[2])
    } else {
        let (s, c) = z.sin_cos();
        let j0 = s / z;
        let j1 = s / (z * z) - c / z;
        let j2 = (3.0 / (z * z) - 1.0) * s / z - 3.0 * c / (z * z);
        (j0, j1, j2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        for n in 1..=20 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                assert!((got - exact).abs() < 1e-13, "n={n} deg={deg}: {got} vs {exact}");
            }
        }
    }

    #[test]
    fn nodes_are_symmetric_and_sorted() {
        let (x, w) = gauss_legendre(16);
        for i in 0..16 {
            assert!((x[i] + x[15 - i]).abs() < 1e-15);
            assert!((w[i] - w[15 - i]).abs() < 1e-15);
        }
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn composite_rule_on_log_panels() {
        let edges = log_edges(1e-3, 10.0, 8);
        let (x, w) = composite_rule(&edges, 8);
        let got: f64 = x.iter().zip(&w).map(|(x, w)| w / x).sum();
        assert!((got - (1e4f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn bessel_series_matches_closed_form_at_switch() {
        let (a0, a1, a2) = spherical_bessel_012(1.0 - 1e-15);
        let z: f64 = 1.0;
        let (s, c) = z.sin_cos();
        assert!((a0 - s / z).abs() < 1e-14);
        assert!((a1 - (s / (z * z) - c / z)).abs() < 1e-14);
        assert!((a2 - ((3.0 / (z * z) - 1.0) * s / z - 3.0 * c / (z * z))).abs() < 1e-14);
        let (b0, b1, b2) = spherical_bessel_012(1e-3);
        assert!((b0 - (1.0 - 1e-6 / 6.0 + 1e-12 / 120.0)).abs() < 1e-15);
        assert!((b1 - 1e-3 / 3.0).abs() < 1e-10 && (b2 - 1e-6 / 15.0).abs() < 1e-13);
    }
}
