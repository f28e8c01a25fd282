//! Gauss–Legendre quadrature.

use std::f64::consts::PI;

/// Nodes and weights of the `k`-point Gauss–Legendre rule on `[a, b]`, nodes ascending.
pub fn gauss_legendre(k: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(k >= 1, "quadrature needs at least one node");
    let mut x = vec![0.0; k];
    let mut w = vec![0.0; k];
    let half = (b - a) / 2.0;
    let mid = (a + b) / 2.0;
    for i in 0..(k + 1) / 2 {
        // Tricomi initial guess, then Newton on P_k.
        let mut z = (PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(k, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(k, z);
        dp = if d != 0.0 { d } else { dp };
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = mid - half * z;
        x[k - 1 - i] = mid + half * z;
        w[i] = wi * half;
        w[k - 1 - i] = wi * half;
    }
    (x, w)
}

/// `(P_k(z), P_k'(z))` by the three-term recurrence.
fn legendre(k: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if k == 0 {
        return (1.0, 0.0);
    }
    for n in 2..=k {
        let nf = n as f64;
        let p2 = ((2.0 * nf - 1.0) * z * p1 - (nf - 1.0) * p0) / nf;
        p0 = p1;
        p1 = p2;
    }
    let d = k as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(5, 0.0, 2.0);
        let int: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(9)).sum();
        assert!((int - 2f64.powi(10) / 10.0).abs() < 1e-11);
    }

    #[test]
    fn large_rule_is_accurate() {
        let (x, w) = gauss_legendre(4000, 0.0, 2.0);
        let int: f64 = x.iter().zip(&w).map(|(x, w)| w * (x * (2.0 - x)).sqrt()).sum();
        assert!((int - PI / 2.0).abs() < 1e-8);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }
}
