//! Structured finite-dimensional operators: band + dense + low-rank parts.

use super::banded::{Band, BandLu};
use crate::error::{Error, Result};
use crate::C64;
use nalgebra::{DMatrix, DVector};
use num_complex::ComplexFloat;

/// Rank-r operator `u * v^†` with `u`, `v` of shape dim × r.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRank {
    pub u: DMatrix<C64>,
    pub v: DMatrix<C64>,
}

impl LowRank {
    pub fn new(u: DMatrix<C64>, v: DMatrix<C64>) -> Self {
        assert_eq!(u.shape(), v.shape(), "low-rank factor shapes differ");
        LowRank { u, v }
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn apply(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
        &self.u * (self.v.adjoint() * x)
    }

    pub fn adjoint(&self) -> LowRank {
        LowRank { u: self.v.clone(), v: self.u.clone() }
    }

    fn concat(&self, other: &LowRank) -> LowRank {
        let n = self.u.nrows();
        let r = self.rank() + other.rank();
        let mut u = DMatrix::zeros(n, r);
        let mut v = DMatrix::zeros(n, r);
        u.columns_mut(0, self.rank()).copy_from(&self.u);
        v.columns_mut(0, self.rank()).copy_from(&self.v);
        u.columns_mut(self.rank(), other.rank()).copy_from(&other.u);
        v.columns_mut(self.rank(), other.rank()).copy_from(&other.v);
        LowRank { u, v }
    }

    #[inline]
    fn entry(&self, i: usize, j: usize) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for r in 0..self.rank() {
            acc += self.u[(i, r)] * self.v[(j, r)].conj();
        }
        acc
    }
}

/// A finite complex operator stored as the sum of optional band, dense and low-rank parts.
///
/// Values are immutable once built; every combinator returns a new operator.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexOperator {
    dim: usize,
    band: Option<Band>,
    dense: Option<DMatrix<C64>>,
    low: Option<LowRank>,
    hermitian: bool,
}

impl ComplexOperator {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "operator dimension must be positive");
        ComplexOperator { dim, band: None, dense: None, low: None, hermitian: true }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diagonal(&vec![C64::new(1.0, 0.0); dim]).with_hermitian(true)
    }

    pub fn from_band(band: Band) -> Self {
        let dim = band.n();
        ComplexOperator { dim, band: Some(band), dense: None, low: None, hermitian: false }
    }

    pub fn from_diagonal(d: &[C64]) -> Self {
        Self::from_band(Band::from_diagonal(d))
    }

    pub fn from_real_diagonal(d: &[f64]) -> Self {
        let d: Vec<C64> = d.iter().map(|&x| C64::new(x, 0.0)).collect();
        Self::from_diagonal(&d).with_hermitian(true)
    }

    pub fn from_dense(m: DMatrix<C64>) -> Self {
        assert!(m.is_square(), "operator matrix must be square");
        ComplexOperator { dim: m.nrows(), band: None, dense: Some(m), low: None, hermitian: false }
    }

    pub fn from_low_rank(low: LowRank) -> Self {
        ComplexOperator { dim: low.u.nrows(), band: None, dense: None, low: Some(low), hermitian: false }
    }

    /// Rank-one operator `|u><v|`.
    pub fn dyad(u: &DVector<C64>, v: &DVector<C64>) -> Self {
        let n = u.len();
        Self::from_low_rank(LowRank::new(
            DMatrix::from_column_slice(n, 1, u.as_slice()),
            DMatrix::from_column_slice(n, 1, v.as_slice()),
        ))
    }

    /// Sets the Hermitian flag without checking; see [`ComplexOperator::hermiticity_defect`].
    pub fn with_hermitian(mut self, flag: bool) -> Self {
        self.hermitian = flag;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }
    pub fn band(&self) -> Option<&Band> {
        self.band.as_ref()
    }
    pub fn dense_part(&self) -> Option<&DMatrix<C64>> {
        self.dense.as_ref()
    }
    pub fn low_rank(&self) -> Option<&LowRank> {
        self.low.as_ref()
    }

    pub fn apply_mat(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
        assert_eq!(x.nrows(), self.dim, "operator/vector dimension mismatch");
        let mut y = DMatrix::zeros(self.dim, x.ncols());
        if let Some(b) = &self.band {
            for k in 0..x.ncols() {
                let mut col = y.column_mut(k);
                b.mul_vec_into(x.column(k).as_slice(), col.as_mut_slice());
            }
        }
        if let Some(d) = &self.dense {
            y += d * x;
        }
        if let Some(l) = &self.low {
            y += l.apply(x);
        }
        y
    }

    pub fn apply(&self, x: &DVector<C64>) -> DVector<C64> {
        let m = DMatrix::from_column_slice(self.dim, 1, x.as_slice());
        DVector::from_column_slice(self.apply_mat(&m).as_slice())
    }

    pub fn adjoint(&self) -> Self {
        ComplexOperator {
            dim: self.dim,
            band: self.band.as_ref().map(|b| b.adjoint()),
            dense: self.dense.as_ref().map(|d| d.adjoint()),
            low: self.low.as_ref().map(|l| l.adjoint()),
            hermitian: self.hermitian,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "operator dimension mismatch");
        let band = match (&self.band, &other.band) {
            (Some(a), Some(b)) => Some(a.add(b)),
            (Some(a), None) => Some(a.clone()),
            (None, Some(b)) => Some(b.clone()),
            (None, None) => None,
        };
        let dense = match (&self.dense, &other.dense) {
            (Some(a), Some(b)) => Some(a + b),
            (Some(a), None) => Some(a.clone()),
            (None, Some(b)) => Some(b.clone()),
            (None, None) => None,
        };
        let low = match (&self.low, &other.low) {
            (Some(a), Some(b)) => Some(a.concat(b)),
            (Some(a), None) => Some(a.clone()),
            (None, Some(b)) => Some(b.clone()),
            (None, None) => None,
        };
        ComplexOperator { dim: self.dim, band, dense, low, hermitian: self.hermitian && other.hermitian }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, c: C64) -> Self {
        ComplexOperator {
            dim: self.dim,
            band: self.band.as_ref().map(|b| b.scale(c)),
            dense: self.dense.as_ref().map(|d| d * c),
            low: self.low.as_ref().map(|l| LowRank { u: &l.u * c, v: l.v.clone() }),
            hermitian: self.hermitian && c.im == 0.0,
        }
    }

    /// `self + c·1`.
    pub fn shift(&self, c: C64) -> Self {
        let mut band = self.band.clone().unwrap_or_else(|| Band::zeros(self.dim, 0, 0));
        band.add_diagonal(c);
        ComplexOperator {
            band: Some(band),
            hermitian: self.hermitian && c.im == 0.0,
            ..self.clone()
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        let mut v = C64::new(0.0, 0.0);
        if let Some(b) = &self.band {
            v += b.get(i, j);
        }
        if let Some(d) = &self.dense {
            v += d[(i, j)];
        }
        if let Some(l) = &self.low {
            v += l.entry(i, j);
        }
        v
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = match &self.band {
            Some(b) => b.to_dense(),
            None => DMatrix::zeros(self.dim, self.dim),
        };
        if let Some(d) = &self.dense {
            m += d;
        }
        if let Some(l) = &self.low {
            m += &l.u * l.v.adjoint();
        }
        m
    }

    /// max_ij |M_ij|.
    pub fn max_abs_entry(&self) -> f64 {
        if self.dense.is_some() || self.low.is_some() {
            let mut best = 0.0f64;
            for i in 0..self.dim {
                for j in 0..self.dim {
                    best = best.max(self.entry(i, j).abs());
                }
            }
            best
        } else {
            self.band.as_ref().map_or(0.0, |b| b.max_abs())
        }
    }

    /// max_ij |M_ij - conj(M_ji)|, evaluated entrywise without densifying.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        if self.dense.is_none() && self.low.is_none() {
            if let Some(b) = &self.band {
                let w = b.kl().max(b.ku());
                for i in 0..self.dim {
                    for j in i..(i + w + 1).min(self.dim) {
                        worst = worst.max((b.get(i, j) - b.get(j, i).conj()).abs());
                    }
                }
            }
            return worst;
        }
        for i in 0..self.dim {
            for j in i..self.dim {
                worst = worst.max((self.entry(i, j) - self.entry(j, i).conj()).abs());
            }
        }
        worst
    }

    pub fn trace(&self) -> C64 {
        let mut t = C64::new(0.0, 0.0);
        if let Some(b) = &self.band {
            for i in 0..self.dim {
                t += b.get(i, i);
            }
        }
        if let Some(d) = &self.dense {
            t += d.trace();
        }
        if let Some(l) = &self.low {
            t += (l.v.adjoint() * &l.u).trace();
        }
        t
    }

    /// True when only the low-rank part is present.
    pub fn is_pure_low_rank(&self) -> bool {
        self.band.is_none() && self.dense.is_none() && self.low.is_some()
    }

    /// Product `self · other`, kept low-rank when either factor is.
    pub fn compose(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "operator dimension mismatch");
        if let (true, Some(l)) = (self.is_pure_low_rank(), &self.low) {
            return Self::from_low_rank(LowRank::new(l.u.clone(), other.adjoint().apply_mat(&l.v)));
        }
        if let (true, Some(l)) = (other.is_pure_low_rank(), &other.low) {
            return Self::from_low_rank(LowRank::new(self.apply_mat(&l.u), l.v.clone()));
        }
        Self::from_dense(self.apply_mat(&other.to_dense()))
    }

    /// Commutator `[self, other]`.
    pub fn commutator(&self, other: &Self) -> Self {
        self.compose(other).sub(&other.compose(self)).with_hermitian(false)
    }

    /// Factorization of `alpha·1 + beta·self` for repeated solves.
    pub fn factor_shifted(&self, alpha: C64, beta: C64) -> Result<ShiftedSolver> {
        let n = self.dim;
        if self.dense.is_some() || self.band.is_none() && self.low.is_none() {
            let mut m = self.to_dense() * beta;
            for i in 0..n {
                m[(i, i)] += alpha;
            }
            return dense_solver(m);
        }
        let mut band = match &self.band {
            Some(b) => b.scale(beta),
            None => Band::zeros(n, 0, 0),
        };
        band.add_diagonal(alpha);
        let lu = band.lu()?;
        let woodbury = match &self.low {
            None => None,
            Some(l) => {
                let bu = l.u.map(|z| z * beta);
                let z = lu.solve_mat(&bu);
                let mut cap = l.v.adjoint() * &z;
                for i in 0..cap.nrows() {
                    cap[(i, i)] += C64::new(1.0, 0.0);
                }
                let r = cap.nrows();
                let cap_lu = cap.lu();
                let probe = DMatrix::<C64>::identity(r, r);
                if cap_lu.solve(&probe).is_none() {
                    return Err(Error::Singular("capacitance matrix of low-rank update".into()));
                }
                Some(Woodbury { z, vh: l.v.adjoint(), cap: cap_lu })
            }
        };
        Ok(ShiftedSolver::Band { lu, woodbury })
    }

    /// Factorization of `self - z·1`.
    pub fn factor_resolvent(&self, z: C64) -> Result<ShiftedSolver> {
        self.factor_shifted(-z, C64::new(1.0, 0.0))
    }
}

fn dense_solver(m: DMatrix<C64>) -> Result<ShiftedSolver> {
    let scale = m.iter().map(|z| z.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let lu = m.lu();
    let u = lu.u();
    let minpiv = (0..u.nrows()).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if !(minpiv > scale * 1e-14) {
        return Err(Error::Singular(format!("dense LU pivot {minpiv:.3e}")));
    }
    Ok(ShiftedSolver::Dense(lu))
}

/// Low-rank correction of a band solve.
#[derive(Clone, Debug)]
pub struct Woodbury {
    z: DMatrix<C64>,
    vh: DMatrix<C64>,
    cap: nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>,
}

/// Precomputed solver for a shifted operator.
#[derive(Clone, Debug)]
pub enum ShiftedSolver {
    Dense(nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>),
    Band { lu: BandLu, woodbury: Option<Woodbury> },
}

impl ShiftedSolver {
    pub fn solve_mat(&self, b: &DMatrix<C64>) -> DMatrix<C64> {
        match self {
            ShiftedSolver::Dense(lu) => lu.solve(b).expect("factorization checked nonsingular"),
            ShiftedSolver::Band { lu, woodbury } => {
                let y = lu.solve_mat(b);
                match woodbury {
                    None => y,
                    Some(w) => {
                        let t = &w.vh * &y;
                        let c = w.cap.solve(&t).expect("capacitance checked nonsingular");
                        y - &w.z * c
                    }
                }
            }
        }
    }

    pub fn solve(&self, b: &DVector<C64>) -> DVector<C64> {
        let m = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        DVector::from_column_slice(self.solve_mat(&m).as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn sample() -> ComplexOperator {
        let n = 7;
        let lower: Vec<C64> = (0..n - 1).map(|i| c(-0.5, 0.1 * i as f64)).collect();
        let upper: Vec<C64> = (0..n - 1).map(|i| c(-0.5, -0.2 * i as f64)).collect();
        let diag: Vec<C64> = (0..n).map(|i| c(2.0 + i as f64, 0.3)).collect();
        let band = ComplexOperator::from_band(Band::tridiagonal(&lower, &diag, &upper));
        let u = DMatrix::from_fn(n, 2, |i, k| c((i + k) as f64 * 0.1, 0.2));
        let v = DMatrix::from_fn(n, 2, |i, k| c(0.3, (i * k) as f64 * 0.05));
        band.add(&ComplexOperator::from_low_rank(LowRank::new(u, v)))
    }

    #[test]
    fn structured_apply_matches_dense() {
        let op = sample();
        let x = DMatrix::from_fn(7, 3, |i, k| c(i as f64 - k as f64, 0.5));
        let err = (op.apply_mat(&x) - op.to_dense() * &x).norm();
        assert!(err < 1e-12);
    }

    #[test]
    fn woodbury_solve_matches_dense() {
        let op = sample();
        let alpha = c(1.0, 0.0);
        let beta = c(0.0, 0.3);
        let s = op.factor_shifted(alpha, beta).unwrap();
        let b = DMatrix::from_fn(7, 2, |i, k| c(1.0 + i as f64, k as f64));
        let x = s.solve_mat(&b);
        let m = DMatrix::<C64>::identity(7, 7) * alpha + op.to_dense() * beta;
        assert!((m * x - b).norm() < 1e-11);
    }

    #[test]
    fn adjoint_is_conjugate_transpose() {
        let op = sample();
        assert!((op.adjoint().to_dense() - op.to_dense().adjoint()).norm() < 1e-14);
    }

    #[test]
    fn hermiticity_defect_detects_asymmetry() {
        let h = ComplexOperator::from_real_diagonal(&[1.0, 2.0]);
        assert_eq!(h.hermiticity_defect(), 0.0);
        assert!(sample().hermiticity_defect() > 0.1);
    }
}
