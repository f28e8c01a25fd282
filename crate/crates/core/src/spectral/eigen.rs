//! Eigen-decompositions: dense Hermitian and non-Hermitian, and shift-invert iteration.

use crate::error::{invalid, Error, Result};
use crate::lattice::{ComplexOperator, StateVector};
use crate::C64;
use nalgebra::{DMatrix, DVector};
use num_complex::ComplexFloat;

/// Eigenvalue with right (and optionally left) eigenvector.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenPair {
    pub value: C64,
    pub vector: StateVector,
    pub left_vector: Option<StateVector>,
}

impl EigenPair {
    /// `‖H v − λ v‖ / (‖H‖_max·‖v‖)` using the max-entry scale of `h`.
    pub fn relative_residual(&self, h: &ComplexOperator) -> f64 {
        let v = &self.vector.amps;
        let r = h.apply(v) - v * self.value;
        let scale = h.max_abs_entry().max(f64::MIN_POSITIVE);
        r.norm() / (scale * v.norm().max(f64::MIN_POSITIVE))
    }
}

/// Full eigen-decomposition of a Hermitian operator, ascending values.
#[derive(Clone, Debug)]
pub struct HermitianDecomposition {
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors in coefficient form (unit weight), column per value.
    pub vectors: DMatrix<C64>,
}

impl HermitianDecomposition {
    pub fn new(h: &ComplexOperator) -> Result<Self> {
        if !h.is_hermitian() {
            return invalid("operator is not flagged Hermitian");
        }
        let m = h.to_dense();
        let n = m.nrows();
        let real = m.iter().all(|z| z.im == 0.0);
        let (vals, vecs): (Vec<f64>, DMatrix<C64>) = if real {
            let r = m.map(|z| z.re);
            let e = nalgebra::SymmetricEigen::new(r);
            (e.eigenvalues.iter().cloned().collect(), e.eigenvectors.map(|x| C64::new(x, 0.0)))
        } else {
            let e = nalgebra::SymmetricEigen::new(m);
            (e.eigenvalues.iter().cloned().collect(), e.eigenvectors)
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let values = order.iter().map(|&i| vals[i]).collect();
        let mut vectors = DMatrix::zeros(n, n);
        for (k, &i) in order.iter().enumerate() {
            let mut col = vecs.column(i).clone_owned();
            fix_phase(&mut col);
            vectors.set_column(k, &col);
        }
        Ok(HermitianDecomposition { values, vectors })
    }

    /// `f(H) x` for coefficient vectors `x`.
    pub fn apply_function(&self, f: impl Fn(f64) -> C64, x: &DMatrix<C64>) -> DMatrix<C64> {
        let mut c = self.vectors.adjoint() * x;
        for (k, &lam) in self.values.iter().enumerate() {
            let fk = f(lam);
            for j in 0..c.ncols() {
                c[(k, j)] *= fk;
            }
        }
        &self.vectors * c
    }

    /// `f(H)` as a dense matrix.
    pub fn function_matrix(&self, f: impl Fn(f64) -> C64) -> DMatrix<C64> {
        let mut scaled = self.vectors.clone();
        for (k, &lam) in self.values.iter().enumerate() {
            let fk = f(lam);
            for i in 0..scaled.nrows() {
                scaled[(i, k)] *= fk;
            }
        }
        scaled * self.vectors.adjoint()
    }
}

/// Rotates a vector so its largest-modulus entry is real positive.
pub fn fix_phase(v: &mut DVector<C64>) {
    let mut best = 0usize;
    let mut bm = 0.0;
    for (i, z) in v.iter().enumerate() {
        if z.abs() > bm * (1.0 + 1e-9) {
            bm = z.abs();
            best = i;
        }
    }
    if bm > 0.0 {
        let ph = v[best] / bm;
        *v /= ph;
    }
}

/// The `k` lowest eigenpairs of a Hermitian operator; vectors normalized with `weight`.
pub fn hermitian_eigs(h: &ComplexOperator, k: usize, weight: f64) -> Result<Vec<EigenPair>> {
    if k > h.dim() {
        return invalid(format!("requested {k} eigenpairs of a {}-dimensional operator", h.dim()));
    }
    let dec = HermitianDecomposition::new(h)?;
    Ok((0..k)
        .map(|i| EigenPair {
            value: C64::new(dec.values[i], 0.0),
            vector: StateVector::from_coefficients(&dec.vectors.column(i).clone_owned(), weight),
            left_vector: None,
        })
        .collect())
}

/// All eigenvalues of a dense complex matrix (Schur form).
pub fn dense_eigenvalues(m: &DMatrix<C64>) -> Result<Vec<C64>> {
    let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
    let ev = schur
        .eigenvalues()
        .ok_or_else(|| Error::Numerical("Schur form has no eigenvalue diagonal".into()))?;
    Ok(ev.iter().cloned().collect())
}

/// Eigenpairs of a dense non-normal matrix, right and left vectors by inverse iteration.
///
/// Left vectors satisfy `l^† M = λ l^†` and are scaled so that `l^† r = 1`.
pub fn dense_eig_pairs(m: &DMatrix<C64>) -> Result<Vec<EigenPair>> {
    let values = dense_eigenvalues(m)?;
    let op = ComplexOperator::from_dense(m.clone());
    values
        .into_iter()
        .map(|lam| {
            let r = inverse_iteration(&op, lam, 4)?;
            let l = inverse_iteration(&op.adjoint(), lam.conj(), 4)?;
            let d = l.dotc(&r);
            if d.abs() < 1e-12 {
                return Err(Error::Numerical(format!("defective eigenvalue {lam}")));
            }
            let l = l / d.conj();
            Ok(EigenPair {
                value: lam,
                vector: StateVector::new(r, 1.0),
                left_vector: Some(StateVector::new(l, 1.0)),
            })
        })
        .collect()
}

/// Inverse iteration at a fixed shift slightly displaced from `sigma`; returns a unit vector.
pub fn inverse_iteration(op: &ComplexOperator, sigma: C64, iters: usize) -> Result<DVector<C64>> {
    let n = op.dim();
    let scale = op.max_abs_entry().max(1.0);
    let mut shift = sigma + C64::new(1e-10 * scale, 1e-10 * scale);
    let mut solver = op.factor_resolvent(shift);
    if solver.is_err() {
        shift = sigma + C64::new(1e-7 * scale, 1e-7 * scale);
        solver = op.factor_resolvent(shift);
    }
    let solver = solver?;
    let mut x = DVector::from_fn(n, |i, _| C64::new(1.0 + 0.1 * ((i * 37) % 11) as f64, 0.05 * (i % 7) as f64));
    x /= C64::new(x.norm(), 0.0);
    for _ in 0..iters {
        let y = solver.solve(&x);
        let nrm = y.norm();
        if !nrm.is_finite() || nrm == 0.0 {
            return Err(Error::Numerical("inverse iteration broke down".into()));
        }
        x = y / C64::new(nrm, 0.0);
    }
    fix_phase(&mut x);
    Ok(x)
}

/// Eigenvalue nearest `seed` by shift-invert iteration with a Rayleigh-quotient refinement.
///
/// Returns the value and unit right eigenvector. The block start guards against a
/// start vector orthogonal to the target.
pub fn shift_invert_nearest(op: &ComplexOperator, seed: C64, tol: f64, max_iter: usize) -> Result<(C64, DVector<C64>)> {
    let n = op.dim();
    let k = 4.min(n);
    let scale = op.max_abs_entry().max(1.0);
    let solver = match op.factor_resolvent(seed) {
        Ok(s) => s,
        Err(Error::Singular(_)) => op.factor_resolvent(seed + C64::new(1e-9 * scale, 1e-9 * scale))?,
        Err(e) => return Err(e),
    };
    let mut q = DMatrix::from_fn(n, k, |i, j| {
        let t = (i as f64 + 1.0) * (0.754_877_666 + 0.569_840_290 * j as f64);
        C64::new((t * 3.1).sin(), (t * 1.7).cos())
    })
    .qr()
    .q();
    let mut lam = seed;
    let mut vec = q.column(0).clone_owned();
    for _ in 0..max_iter {
        let y = solver.solve_mat(&q);
        q = y.qr().q();
        // Ritz values of the shift-inverted operator on span(q).
        let aq = op.apply_mat(&q);
        let small = q.adjoint() * &aq;
        let ev = dense_eigenvalues(&small)?;
        let best = *ev
            .iter()
            .min_by(|a, b| (*a - seed).abs().total_cmp(&(*b - seed).abs()))
            .expect("nonempty block");
        let ritz = inverse_iteration(&ComplexOperator::from_dense(small.clone()), best, 2)?;
        let v = &q * ritz;
        let res = (op.apply(&v) - &v * best).norm() / v.norm();
        lam = best;
        vec = v;
        if res <= tol * op.max_abs_entry().max(1.0) {
            break;
        }
    }
    // Rayleigh-quotient refinement at the converged eigenvalue.
    let mut v = vec / C64::new(1.0, 0.0);
    for _ in 0..3 {
        let s = match op.factor_resolvent(lam + C64::new(1e-13, 1e-13) * lam.abs().max(1.0)) {
            Ok(s) => s,
            Err(_) => break,
        };
        let y = s.solve(&v);
        let nrm = y.norm();
        if !nrm.is_finite() || nrm == 0.0 {
            break;
        }
        v = y / C64::new(nrm, 0.0);
        let hv = op.apply(&v);
        lam = v.dotc(&hv) / v.dotc(&v);
    }
    v /= C64::new(v.norm(), 0.0);
    fix_phase(&mut v);
    Ok((lam, v))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn diagonal_two_by_two() {
        let h = ComplexOperator::from_real_diagonal(&[2.0, 1.0]);
        let e = hermitian_eigs(&h, 2, 1.0).unwrap();
        assert_eq!(e[0].value.re, 1.0);
        assert_eq!(e[1].value.re, 2.0);
    }

    #[test]
    fn too_many_pairs_rejected() {
        let h = ComplexOperator::from_real_diagonal(&[2.0, 1.0]);
        assert!(hermitian_eigs(&h, 3, 1.0).is_err());
    }

    #[test]
    fn non_hermitian_rejected() {
        let h = ComplexOperator::from_dense(DMatrix::from_element(2, 2, c(0.0, 1.0)));
        assert!(hermitian_eigs(&h, 1, 1.0).is_err());
    }

    #[test]
    fn weighted_normalization() {
        let h = ComplexOperator::from_real_diagonal(&[3.0, 1.0, 2.0]);
        let e = hermitian_eigs(&h, 3, 0.25).unwrap();
        for p in &e {
            assert!((p.vector.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn triangular_pairs_have_analytic_vectors() {
        let m = DMatrix::from_row_slice(3, 3, &[c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(2.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(3.0, 0.0)]);
        let pairs = dense_eig_pairs(&m).unwrap();
        let p2 = pairs.iter().find(|p| (p.value - c(2.0, 0.0)).abs() < 1e-10).unwrap();
        let r = &p2.vector.amps;
        // Right eigenvector for 2 is ∝ (1, 1, 0); left is ∝ (0, 1, -1).
        assert!((r[0] - r[1]).abs() < 1e-9 && r[2].abs() < 1e-9);
        let l = &p2.left_vector.as_ref().unwrap().amps;
        assert!(l[0].abs() < 1e-9 && (l[1] + l[2]).abs() < 1e-9);
        assert!((l.dotc(r) - c(1.0, 0.0)).abs() < 1e-12);
    }

    #[test]
    fn shift_invert_finds_nearest() {
        let d: Vec<C64> = (0..50).map(|k| c(k as f64 * 0.3, -0.01 * k as f64)).collect();
        let op = ComplexOperator::from_diagonal(&d);
        let (lam, v) = shift_invert_nearest(&op, c(3.05, 0.0), 1e-12, 50).unwrap();
        assert!((lam - c(3.0, -0.1)).abs() < 1e-10, "{lam}");
        assert!((v[10].abs() - 1.0).abs() < 1e-9);
    }
}
