//! Operator norms for dense and matrix-free operators.

use crate::lattice::ComplexOperator;
use crate::C64;
use nalgebra::DMatrix;

/// Dimension up to which norms are taken from a dense SVD.
pub const DENSE_NORM_CAP: usize = 256;

/// A linear map known only through its action and the action of its adjoint.
pub trait LinearMap: Sync {
    fn dim(&self) -> usize;
    fn apply_mat(&self, x: &DMatrix<C64>) -> DMatrix<C64>;
    fn apply_adjoint_mat(&self, x: &DMatrix<C64>) -> DMatrix<C64>;
}

impl LinearMap for ComplexOperator {
    fn dim(&self) -> usize {
        ComplexOperator::dim(self)
    }
    fn apply_mat(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
        ComplexOperator::apply_mat(self, x)
    }
    fn apply_adjoint_mat(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
        self.adjoint().apply_mat(x)
    }
}

/// Largest singular value of a dense matrix.
pub fn dense_norm(m: &DMatrix<C64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Operator 2-norm: dense SVD for small dimensions, block power iteration otherwise.
pub fn op_norm(op: &ComplexOperator) -> f64 {
    if op.dim() <= DENSE_NORM_CAP {
        return dense_norm(&op.to_dense());
    }
    if let (None, None, Some(l)) = (op.band(), op.dense_part(), op.low_rank()) {
        return low_rank_norm(&l.u, &l.v);
    }
    power_norm(op, 4, 200, 1e-10)
}

/// Norm of `u v^†` from thin QR factors.
pub fn low_rank_norm(u: &DMatrix<C64>, v: &DMatrix<C64>) -> f64 {
    if u.ncols() == 0 {
        return 0.0;
    }
    let ru = u.clone().qr().r();
    let rv = v.clone().qr().r();
    dense_norm(&(ru * rv.adjoint()))
}

/// Subspace iteration on `M^†M` with Rayleigh–Ritz extraction.
pub fn power_norm(map: &dyn LinearMap, block: usize, max_iter: usize, rtol: f64) -> f64 {
    let n = map.dim();
    let k = block.min(n).max(1);
    let mut q = DMatrix::from_fn(n, k, |i, j| {
        // Deterministic start block with no special alignment.
        let t = (i as f64 + 1.0) * (0.618_033_988_75 + j as f64 * 0.414_213_562_37);
        C64::new((t * 12.9898).sin(), (t * 78.233).cos())
    });
    q = q.qr().q();
    let mut last = 0.0;
    for it in 0..max_iter {
        let y = map.apply_adjoint_mat(&map.apply_mat(&q));
        let small = q.adjoint() * &y;
        let est = small.symmetric_eigenvalues().iter().cloned().fold(0.0, f64::max).max(0.0).sqrt();
        if it > 2 && (est - last).abs() <= rtol * est.max(f64::MIN_POSITIVE) {
            return est;
        }
        last = est;
        if y.norm() == 0.0 {
            return 0.0;
        }
        q = y.qr().q();
    }
    last
}
