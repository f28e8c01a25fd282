//! Least-squares fits used by every scaling check.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// Which points enter a fit.
#[derive(Clone, Debug, Default)]
pub enum InlierRule {
    #[default]
    All,
    /// Drop points with `y < 10·floor` (integrator error floor).
    AboveFloor(f64),
    Mask(Vec<bool>),
}

/// Straight-line fit `y ≈ slope·x + intercept` on (possibly log-transformed) data.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ScalingFit {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub inliers: Vec<bool>,
}

impl ScalingFit {
    pub fn n_inliers(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

fn line(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let r2 = if syy > 0.0 { (1.0 - sse / syy).clamp(0.0, 1.0) } else { 1.0 };
    (slope, intercept, r2)
}

fn select(xs: &[f64], ys: &[f64], rule: &InlierRule, valid: impl Fn(f64, f64) -> bool) -> Result<Vec<bool>> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidInput(format!("fit data lengths differ: {} vs {}", xs.len(), ys.len())));
    }
    let mask: Vec<bool> = xs
        .iter()
        .zip(ys)
        .enumerate()
        .map(|(i, (&x, &y))| {
            let base = valid(x, y);
            base && match rule {
                InlierRule::All => true,
                InlierRule::AboveFloor(f) => y >= 10.0 * f,
                InlierRule::Mask(m) => m.get(i).copied().unwrap_or(false),
            }
        })
        .collect();
    let k = mask.iter().filter(|&&b| b).count();
    if k < 3 {
        return Err(Error::TooFewInliers(k));
    }
    Ok(mask)
}

/// Least squares of `log y` on `log x` over inliers; non-positive points are never inliers.
pub fn fit_loglog(xs: &[f64], ys: &[f64], rule: &InlierRule) -> Result<ScalingFit> {
    let mask = select(xs, ys, rule, |x, y| x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite())?;
    let (lx, ly): (Vec<f64>, Vec<f64>) =
        xs.iter().zip(ys).zip(&mask).filter(|(_, &m)| m).map(|((x, y), _)| (x.ln(), y.ln())).unzip();
    let (slope, intercept, r2) = line(&lx, &ly);
    Ok(ScalingFit { x: xs.to_vec(), y: ys.to_vec(), slope, intercept, r2, inliers: mask })
}

/// Least squares of `y` on `x` over inliers.
pub fn fit_linear(xs: &[f64], ys: &[f64], rule: &InlierRule) -> Result<ScalingFit> {
    let mask = select(xs, ys, rule, |x, y| x.is_finite() && y.is_finite())?;
    let (fx, fy): (Vec<f64>, Vec<f64>) = xs.iter().zip(ys).zip(&mask).filter(|(_, &m)| m).map(|((x, y), _)| (*x, *y)).unzip();
    let (slope, intercept, r2) = line(&fx, &fy);
    Ok(ScalingFit { x: xs.to_vec(), y: ys.to_vec(), slope, intercept, r2, inliers: mask })
}

/// Coefficients `c` minimizing `Σ_i (y_i − Σ_k c_k f_k(x_i))²`, with relative residual.
pub fn fit_basis(xs: &[f64], ys: &[f64], basis: &[&dyn Fn(f64) -> f64]) -> Result<(Vec<f64>, f64)> {
    if xs.len() < basis.len() || basis.is_empty() {
        return Err(Error::TooFewInliers(xs.len()));
    }
    let a = DMatrix::from_fn(xs.len(), basis.len(), |i, k| basis[k](xs[i]));
    let b = DVector::from_column_slice(ys);
    let svd = a.clone().svd(true, true);
    let c = svd.solve(&b, 1e-14).map_err(|e| Error::Numerical(e.to_string()))?;
    let res = (&a * &c - &b).norm() / b.norm().max(f64::MIN_POSITIVE);
    Ok((c.iter().cloned().collect(), res))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x| 7.0 / x).collect();
        let f = fit_loglog(&xs, &ys, &InlierRule::All).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_law() {
        let xs = [0.5, 1.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x * x).collect();
        assert!((fit_loglog(&xs, &ys, &InlierRule::All).unwrap().slope - 2.0).abs() < 1e-12);
    }

    #[test]
    fn floor_filter_recovers_slope() {
        let floor = 1e-9;
        let xs: Vec<f64> = (0..14).map(|k| 2f64.powi(k * 3)).collect();
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| 1.0 / x + floor * (1.0 + 0.5 * ((i * 7) % 3) as f64)).collect();
        let f = fit_loglog(&xs, &ys, &InlierRule::AboveFloor(floor)).unwrap();
        assert!((f.slope + 1.0).abs() < 0.05, "{}", f.slope);
        assert!(f.n_inliers() < xs.len());
    }

    #[test]
    fn too_few_points() {
        assert_eq!(fit_loglog(&[1.0, 2.0], &[1.0, 2.0], &InlierRule::All), Err(Error::TooFewInliers(2)));
        assert_eq!(fit_loglog(&[1.0, 2.0, 3.0], &[1.0, -2.0, 3.0], &InlierRule::All), Err(Error::TooFewInliers(2)));
    }

    #[test]
    fn basis_fit_recovers_mixture() {
        let xs = [1.0, 2.0, 4.0, 8.0, 16.0];
        let ys: Vec<f64> = xs.iter().map(|t| 0.5 / t + 0.01 * t).collect();
        let (c, res) = fit_basis(&xs, &ys, &[&|t| 1.0 / t, &|t| t]).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-10 && (c[1] - 0.01).abs() < 1e-10 && res < 1e-12);
    }
}
