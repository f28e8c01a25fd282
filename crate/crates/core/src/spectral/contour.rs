//! Contour-integral projectors and their Rayleigh–Schrödinger truncations.

use super::eigen::dense_eigenvalues;
use super::norms::{dense_norm, low_rank_norm, power_norm, LinearMap, DENSE_NORM_CAP};
use crate::error::{invalid, Error, Result};
use crate::lattice::{ComplexOperator, LowRank, ShiftedSolver};
use crate::C64;
use nalgebra::{DMatrix, DVector};
use num_complex::ComplexFloat;
use rayon::prelude::*;
use std::f64::consts::PI;

/// Dimension up to which contour validation uses a dense eigensolve.
pub const CONTOUR_CHECK_CAP: usize = 256;

/// Circle `center + radius·e^{iφ}` sampled at `n_quadrature` equispaced angles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contour {
    pub center: C64,
    pub radius: f64,
    pub n_quadrature: usize,
}

impl Contour {
    pub fn new(center: C64, radius: f64, n_quadrature: usize) -> Result<Self> {
        if !(radius > 0.0) || n_quadrature == 0 {
            return invalid(format!("contour needs radius > 0 and nodes > 0, got {radius}, {n_quadrature}"));
        }
        Ok(Contour { center, radius, n_quadrature })
    }

    pub fn with_default_nodes(center: C64, radius: f64) -> Result<Self> {
        Self::new(center, radius, 64)
    }

    /// Nodes `z_j` and trapezoid weights `w_j` with `∮ f dz/(2πi) ≈ Σ w_j f(z_j)`.
    pub fn nodes(&self) -> Vec<(C64, C64)> {
        let n = self.n_quadrature;
        (0..n)
            .map(|j| {
                let phi = 2.0 * PI * (j as f64 + 0.5) / n as f64;
                let d = C64::from_polar(self.radius, phi);
                (self.center + d, d / n as f64)
            })
            .collect()
    }

    pub fn encloses(&self, z: C64) -> bool {
        (z - self.center).abs() < self.radius
    }

    /// Checks that no eigenvalue lies within `radius/4` of the circle.
    pub fn validate(&self, eigenvalues: &[C64]) -> Result<()> {
        let margin = self.radius / 4.0;
        let nearest = eigenvalues
            .iter()
            .map(|z| ((z - self.center).abs() - self.radius).abs())
            .fold(f64::INFINITY, f64::min);
        if nearest < margin {
            return Err(Error::ContourTooClose { distance: nearest, margin });
        }
        Ok(())
    }
}

/// Operator with the projector invariants: `P² = P`, `tr P = rank`.
#[derive(Clone, Debug)]
pub struct Projector {
    pub operator: ComplexOperator,
    pub rank: usize,
}

impl Projector {
    /// Oblique rank-one projector `r l^† / (l^† r)`.
    pub fn rank_one(right: &DVector<C64>, left: &DVector<C64>) -> Result<Self> {
        let d = left.dotc(right);
        if d.abs() < 1e-14 * right.norm() * left.norm() {
            return Err(Error::Numerical("left and right vectors are orthogonal".into()));
        }
        let l = left / d.conj();
        Ok(Projector { operator: ComplexOperator::dyad(right, &l), rank: 1 })
    }

    /// Orthogonal projector onto the span of orthonormal columns.
    pub fn orthogonal(q: &DMatrix<C64>) -> Self {
        let op = ComplexOperator::from_low_rank(LowRank::new(q.clone(), q.clone())).with_hermitian(true);
        Projector { operator: op, rank: q.ncols() }
    }

    /// Orthogonal rank-one projector onto a vector (normalized internally).
    pub fn onto(v: &DVector<C64>) -> Self {
        let u = v / C64::new(v.norm(), 0.0);
        Self::orthogonal(&DMatrix::from_column_slice(u.len(), 1, u.as_slice()))
    }

    pub fn dim(&self) -> usize {
        self.operator.dim()
    }

    /// `‖P² − P‖` in the operator norm.
    pub fn idempotency_defect(&self) -> f64 {
        idempotency_defect(&self.operator)
    }

    /// Largest violation of the type invariants: idempotency and trace vs rank.
    pub fn check(&self, tol_idem: f64, tol_trace: f64) -> Result<()> {
        let d = self.idempotency_defect();
        if d > tol_idem {
            return Err(Error::Numerical(format!("projector idempotency defect {d:.3e}")));
        }
        let t = self.operator.trace();
        if (t - C64::new(self.rank as f64, 0.0)).abs() > tol_trace {
            return Err(Error::Numerical(format!("projector trace {t} differs from rank {}", self.rank)));
        }
        Ok(())
    }
}

/// `‖M² − M‖`, exact on low-rank storage.
pub fn idempotency_defect(m: &ComplexOperator) -> f64 {
    if let (true, Some(l)) = (m.is_pure_low_rank(), m.low_rank()) {
        let mut core = l.v.adjoint() * &l.u;
        for i in 0..core.nrows() {
            core[(i, i)] -= C64::new(1.0, 0.0);
        }
        return low_rank_norm(&(&l.u * core), &l.v);
    }
    if m.dim() <= DENSE_NORM_CAP * 2 {
        let d = m.to_dense();
        return dense_norm(&(&d * &d - &d));
    }
    struct Defect<'a>(&'a ComplexOperator);
    impl LinearMap for Defect<'_> {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn apply_mat(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
            let y = self.0.apply_mat(x);
            self.0.apply_mat(&y) - y
        }
        fn apply_adjoint_mat(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
            let a = self.0.adjoint();
            let y = a.apply_mat(x);
            a.apply_mat(&y) - y
        }
    }
    power_norm(&Defect(m), 4, 200, 1e-10)
}

fn resolvent_solvers(h: &ComplexOperator, c: &Contour) -> Result<Vec<(ShiftedSolver, C64)>> {
    c.nodes()
        .into_par_iter()
        .map(|(z, w)| {
            // (z − H)^{-1} = −(H − z)^{-1}
            let s = h.factor_resolvent(z).map_err(|_| nearest_diag(h, c))?;
            Ok((s, -w))
        })
        .collect()
}

fn nearest_diag(h: &ComplexOperator, c: &Contour) -> Error {
    let distance = if h.dim() <= CONTOUR_CHECK_CAP {
        dense_eigenvalues(&h.to_dense())
            .map(|ev| ev.iter().map(|z| ((z - c.center).abs() - c.radius).abs()).fold(f64::INFINITY, f64::min))
            .unwrap_or(f64::NAN)
    } else {
        f64::NAN
    };
    Error::ContourTooClose { distance, margin: c.radius / 4.0 }
}

/// Spectral projector `∮ (z − H)^{-1} dz/(2πi)` by trapezoidal quadrature.
///
/// The rank is the rounded real part of the trace. For dimensions up to
/// [`CONTOUR_CHECK_CAP`] the contour margin is checked against a dense eigensolve.
pub fn riesz_projector(h: &ComplexOperator, c: &Contour) -> Result<Projector> {
    let n = h.dim();
    if n <= CONTOUR_CHECK_CAP {
        c.validate(&dense_eigenvalues(&h.to_dense())?)?;
    }
    let solvers = resolvent_solvers(h, c)?;
    let id = DMatrix::<C64>::identity(n, n);
    let parts: Vec<DMatrix<C64>> = solvers.par_iter().map(|(s, w)| s.solve_mat(&id) * *w).collect();
    let mut p = DMatrix::zeros(n, n);
    for part in parts {
        p += part;
    }
    let rank = p.trace().re.round().max(0.0) as usize;
    Ok(Projector { operator: ComplexOperator::from_dense(p).with_hermitian(h.is_hermitian()), rank })
}

/// Matrix-free `P_g^N = ∮ Σ_{n<N} g^n R_0 (V R_0)^n dz/(2πi)` with `R_0(z) = (z − H_0)^{-1}`.
///
/// The series is the full Neumann truncation of `(z − H_0 − gV)^{-1}`, so that
/// `P_g − P_g^N = O(g^N)` and `(P_g^N)² − P_g^N = O(g^N)`.
pub struct RsProjector {
    v: ComplexOperator,
    vh: ComplexOperator,
    g: f64,
    order: usize,
    nodes: Vec<(ShiftedSolver, ShiftedSolver, C64)>,
}

impl RsProjector {
    pub fn new(h0: &ComplexOperator, v: &ComplexOperator, c: &Contour, g: f64, order: usize) -> Result<Self> {
        if order == 0 {
            return invalid("RS order must be at least 1");
        }
        let h0a = h0.adjoint();
        let nodes = c
            .nodes()
            .into_par_iter()
            .map(|(z, w)| {
                let s = h0.factor_resolvent(z).map_err(|_| nearest_diag(h0, c))?;
                let sa = h0a.factor_resolvent(z.conj()).map_err(|_| nearest_diag(h0, c))?;
                Ok((s, sa, -w))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RsProjector { v: v.clone(), vh: v.adjoint(), g, order, nodes })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let n = self.v.dim();
        self.apply_mat(&DMatrix::identity(n, n))
    }

    pub fn to_operator(&self) -> ComplexOperator {
        ComplexOperator::from_dense(self.to_dense())
    }
}

impl LinearMap for RsProjector {
    fn dim(&self) -> usize {
        self.v.dim()
    }

    fn apply_mat(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
        // Σ_n g^n R0 (V R0)^n x, built right to left; R0 = −(H0 − z)^{-1} is folded into w.
        let parts: Vec<DMatrix<C64>> = self
            .nodes
            .par_iter()
            .map(|(s, _, w)| {
                let mut acc = DMatrix::zeros(x.nrows(), x.ncols());
                let mut term = s.solve_mat(x);
                let mut gn = C64::new(1.0, 0.0);
                for n in 0..self.order {
                    if n > 0 {
                        term = s.solve_mat(&self.v.apply_mat(&term)) * C64::new(-1.0, 0.0);
                        gn *= self.g;
                    }
                    acc += &term * gn;
                }
                acc * *w
            })
            .collect();
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for p in parts {
            out += p;
        }
        out
    }

    fn apply_adjoint_mat(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
        // (R0 (V R0)^n)^† = (R0^† V^†)^n R0^†
        let parts: Vec<DMatrix<C64>> = self
            .nodes
            .par_iter()
            .map(|(_, sa, w)| {
                let mut acc = DMatrix::zeros(x.nrows(), x.ncols());
                let mut term = sa.solve_mat(x);
                let mut gn = C64::new(1.0, 0.0);
                for n in 0..self.order {
                    if n > 0 {
                        term = sa.solve_mat(&self.vh.apply_mat(&term)) * C64::new(-1.0, 0.0);
                        gn *= self.g;
                    }
                    acc += &term * gn;
                }
                acc * w.conj()
            })
            .collect();
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for p in parts {
            out += p;
        }
        out
    }
}

/// Dense `P_g^N`; `p0` is checked to be reproduced by the zeroth-order contour integral.
pub fn rs_projector(
    h0: &ComplexOperator,
    v: &ComplexOperator,
    p0: &Projector,
    c: &Contour,
    g: f64,
    order: usize,
) -> Result<ComplexOperator> {
    let n = h0.dim();
    if n <= CONTOUR_CHECK_CAP {
        c.validate(&dense_eigenvalues(&h0.to_dense())?)?;
        c.validate(&dense_eigenvalues(&h0.add(&v.scale(C64::new(g, 0.0))).to_dense())?)?;
    }
    let zeroth = RsProjector::new(h0, v, c, g, 1)?;
    let probe = p0.operator.to_dense();
    let mismatch = dense_norm(&(zeroth.apply_mat(&probe) - &probe));
    if mismatch > 1e-6 {
        return Err(Error::Numerical(format!("contour does not enclose exactly Ran P0 (mismatch {mismatch:.3e})")));
    }
    Ok(RsProjector::new(h0, v, c, g, order)?.to_operator())
}

/// `‖(P_g^N)² − P_g^N‖` for the matrix-free truncation.
pub fn rs_defect(p: &RsProjector) -> f64 {
    struct Defect<'a>(&'a RsProjector);
    impl LinearMap for Defect<'_> {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn apply_mat(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
            let y = self.0.apply_mat(x);
            self.0.apply_mat(&y) - y
        }
        fn apply_adjoint_mat(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
            let y = self.0.apply_adjoint_mat(x);
            self.0.apply_adjoint_mat(&y) - y
        }
    }
    if p.dim() <= DENSE_NORM_CAP {
        let d = p.to_dense();
        return dense_norm(&(&d * &d - &d));
    }
    power_norm(&Defect(p), 3, 60, 1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::hermitian_eigs;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn herm(n: usize, seed: u64) -> DMatrix<C64> {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let a = DMatrix::from_fn(n, n, |_, _| c(next(), next()));
        (&a + a.adjoint()) * c(0.5, 0.0)
    }

    #[test]
    fn diagonal_projector() {
        let h = ComplexOperator::from_real_diagonal(&[0.0, 5.0]);
        let p = riesz_projector(&h, &Contour::with_default_nodes(c(0.0, 0.0), 1.0).unwrap()).unwrap();
        let d = p.operator.to_dense();
        assert!((d[(0, 0)] - c(1.0, 0.0)).abs() < 1e-12 && d[(1, 1)].abs() < 1e-12);
        assert_eq!(p.rank, 1);
    }

    #[test]
    fn contour_on_spectrum_rejected() {
        let h = ComplexOperator::from_real_diagonal(&[0.0, 1.05]);
        let r = riesz_projector(&h, &Contour::with_default_nodes(c(0.0, 0.0), 1.0).unwrap());
        assert!(matches!(r, Err(Error::ContourTooClose { .. })));
    }

    #[test]
    fn hermitian_projector_matches_eigenvectors() {
        let mut m = herm(6, 3);
        for i in 0..6 {
            m[(i, i)] += c(2.0 * i as f64, 0.0);
        }
        let h = ComplexOperator::from_dense(m).with_hermitian(true);
        let e = hermitian_eigs(&h, 6, 1.0).unwrap();
        let center = (e[0].value + e[1].value) * 0.5;
        let radius = (e[2].value - e[0].value).re / 2.0;
        let contour = Contour::with_default_nodes(center, radius).unwrap();
        contour.validate(&e.iter().map(|p| p.value).collect::<Vec<_>>()).unwrap();
        let p = riesz_projector(&h, &contour).unwrap();
        let mut oracle = DMatrix::zeros(6, 6);
        for pair in &e[..2] {
            oracle += &pair.vector.amps * pair.vector.amps.adjoint();
        }
        assert!((p.operator.to_dense() - oracle).camax() < 1e-8);
        p.check(1e-8, 1e-6).unwrap();
    }

    #[test]
    fn oblique_projector_for_triangular() {
        let m = DMatrix::from_row_slice(3, 3, &[c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(2.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(3.0, 0.0)]);
        let h = ComplexOperator::from_dense(m);
        let p = riesz_projector(&h, &Contour::with_default_nodes(c(2.0, 0.0), 0.5).unwrap()).unwrap();
        let r = DVector::from_vec(vec![c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        let l = DVector::from_vec(vec![c(0.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0)]);
        let oracle = Projector::rank_one(&r, &l).unwrap().operator.to_dense();
        assert!(dense_norm(&(p.operator.to_dense() - oracle)) < 1e-8);
    }

    fn small_model() -> (ComplexOperator, ComplexOperator) {
        let h0 = ComplexOperator::from_real_diagonal(&[0.0, 1.0, 1.7, 2.4, 3.0, 3.5, 4.1, 5.0]);
        let mut v = herm(8, 11);
        v *= c(2.0, 0.0);
        (h0, ComplexOperator::from_dense(v).with_hermitian(true))
    }

    #[test]
    fn rs_zero_coupling_and_first_order_equal_p0() {
        let (h0, v) = small_model();
        let contour = Contour::with_default_nodes(c(0.0, 0.0), 0.5).unwrap();
        let p0 = riesz_projector(&h0, &contour).unwrap();
        let a = rs_projector(&h0, &v, &p0, &contour, 0.0, 3).unwrap().to_dense();
        let b = rs_projector(&h0, &v, &p0, &contour, 0.05, 1).unwrap().to_dense();
        let p0d = p0.operator.to_dense();
        assert!((a - &p0d).camax() < 1e-12);
        assert!((b - &p0d).camax() < 1e-12);
    }

    #[test]
    fn rs_truncation_error_is_second_order() {
        let (h0, v) = small_model();
        let contour = Contour::with_default_nodes(c(0.0, 0.0), 0.5).unwrap();
        let p0 = riesz_projector(&h0, &contour).unwrap();
        let gs = [1e-1, 1e-2, 1e-3];
        let errs: Vec<f64> = gs
            .iter()
            .map(|&g| {
                let hg = h0.add(&v.scale(c(g, 0.0)));
                let pg = riesz_projector(&hg, &contour).unwrap().operator.to_dense();
                let pn = rs_projector(&h0, &v, &p0, &contour, g, 2).unwrap().to_dense();
                dense_norm(&(pn - pg))
            })
            .collect();
        let slope = (errs[0] / errs[2]).ln() / (gs[0] / gs[2]).ln();
        assert!((slope - 2.0).abs() < 0.1, "slope {slope}, errs {errs:?}");
    }

    #[test]
    fn rs_defect_scales_with_order() {
        let (h0, v) = small_model();
        let contour = Contour::with_default_nodes(c(0.0, 0.0), 0.5).unwrap();
        for order in [2usize, 3] {
            let d: Vec<f64> = [0.04, 0.02, 0.01]
                .iter()
                .map(|&g| rs_defect(&RsProjector::new(&h0, &v, &contour, g, order).unwrap()))
                .collect();
            let slope = (d[0] / d[2]).ln() / 4f64.ln();
            assert!(slope >= order as f64 - 0.2, "order {order}: slope {slope}");
        }
    }
}
