//! Continuation of spectral branches in s.

use super::contour::Projector;
use super::eigen::EigenPair;
use crate::error::{invalid, Error, Result};
use crate::lattice::{ComplexOperator, StateVector};
use crate::C64;
use nalgebra::DVector;
use num_complex::ComplexFloat;

/// Minimum overlap accepted by [`track_branch`].
pub const BRANCH_OVERLAP_MIN: f64 = 0.5;

fn overlap(a: &StateVector, b: &StateVector) -> f64 {
    (a.inner(b).abs() / (a.norm() * b.norm())).min(1.0)
}

/// Selects the candidate with maximal overlap with `prev`; ties go to the nearer value.
pub fn track_branch(prev: &EigenPair, pairs: &[EigenPair], s: f64) -> Result<EigenPair> {
    if pairs.is_empty() {
        return invalid("no candidate eigenpairs");
    }
    let mut best: Option<(f64, f64, &EigenPair)> = None;
    for p in pairs {
        let o = overlap(&prev.vector, &p.vector);
        let d = (p.value - prev.value).abs();
        best = match best {
            None => Some((o, d, p)),
            Some((bo, bd, bp)) => {
                if o > bo + 1e-12 || ((o - bo).abs() <= 1e-12 && d < bd) {
                    Some((o, d, p))
                } else {
                    Some((bo, bd, bp))
                }
            }
        };
    }
    let (o, _, p) = best.expect("nonempty");
    if o <= BRANCH_OVERLAP_MIN {
        return Err(Error::BranchLost { overlap: o, s });
    }
    Ok(p.clone())
}

/// Central-difference derivative of a projector family.
#[derive(Clone, Debug)]
pub struct ProjectorDerivative {
    pub operator: ComplexOperator,
    /// Set when `s ± ds` left [0, 1] and a one-sided difference was used.
    pub one_sided: bool,
}

/// `(P(s+ds) − P(s−ds)) / 2ds`, one-sided near the ends of [0, 1].
pub fn projector_derivative(p: impl Fn(f64) -> Result<Projector>, s: f64, ds: f64) -> Result<ProjectorDerivative> {
    if !(ds > 0.0) {
        return invalid(format!("derivative step must be positive, got {ds}"));
    }
    let (a, b, one_sided) = if s - ds < 0.0 {
        (s, s + ds, true)
    } else if s + ds > 1.0 {
        (s - ds, s, true)
    } else {
        (s - ds, s + ds, false)
    };
    let pa = p(a)?;
    let pb = p(b)?;
    let op = pb.operator.sub(&pa.operator).scale(C64::new(1.0 / (b - a), 0.0));
    Ok(ProjectorDerivative { operator: op.with_hermitian(pa.operator.is_hermitian()), one_sided })
}

/// `Σ ξ(λ_k)|v_k><v_k|` for Hermitian `h`.
pub fn spectral_function(h: &ComplexOperator, xi: impl Fn(f64) -> f64) -> Result<ComplexOperator> {
    let dec = super::eigen::HermitianDecomposition::new(h)?;
    Ok(ComplexOperator::from_dense(dec.function_matrix(|x| C64::new(xi(x), 0.0))).with_hermitian(true))
}

/// Rank-one branch sampled on a uniform s-grid with 4-point interpolation between nodes.
///
/// Vectors are stored phase-aligned so that adjacent right vectors have positive overlap.
#[derive(Clone, Debug)]
pub struct BranchTable {
    pub s: Vec<f64>,
    pub values: Vec<C64>,
    pub right: Vec<DVector<C64>>,
    /// Left vectors normalized to `l^† r = 1`; `None` for orthogonal branches.
    pub left: Option<Vec<DVector<C64>>>,
}

impl BranchTable {
    /// Builds a table by calling `solve(s, previous)` on each node of a uniform grid.
    pub fn build(
        n_nodes: usize,
        mut solve: impl FnMut(f64, Option<&EigenPair>) -> Result<EigenPair>,
    ) -> Result<Self> {
        if n_nodes < 4 {
            return invalid("branch table needs at least 4 nodes");
        }
        let mut s = Vec::with_capacity(n_nodes);
        let mut values = Vec::with_capacity(n_nodes);
        let mut right: Vec<DVector<C64>> = Vec::with_capacity(n_nodes);
        let mut left: Vec<DVector<C64>> = Vec::new();
        let mut prev: Option<EigenPair> = None;
        let mut has_left = true;
        for k in 0..n_nodes {
            let sk = k as f64 / (n_nodes - 1) as f64;
            let mut pair = solve(sk, prev.as_ref())?;
            if let Some(p) = &prev {
                pair = track_branch(p, std::slice::from_ref(&pair), sk)?;
                let ph = p.vector.amps.dotc(&pair.vector.amps);
                let ph = ph / ph.abs();
                pair.vector.amps /= ph;
                if let Some(l) = pair.left_vector.as_mut() {
                    l.amps /= ph;
                }
            }
            let r = pair.vector.amps.clone() / C64::new(pair.vector.amps.norm(), 0.0);
            match &pair.left_vector {
                Some(l) => {
                    let d = l.amps.dotc(&r);
                    left.push(l.amps.clone() / d.conj());
                }
                None => has_left = false,
            }
            s.push(sk);
            values.push(pair.value);
            right.push(r);
            prev = Some(pair);
        }
        Ok(BranchTable { s, values, right, left: if has_left { Some(left) } else { None } })
    }

    fn weights(&self, s: f64) -> (usize, [f64; 4]) {
        let n = self.s.len();
        let h = 1.0 / (n - 1) as f64;
        let t = (s.clamp(0.0, 1.0) / h).min((n - 1) as f64);
        let i = (t.floor() as usize).min(n - 2);
        let i0 = i.saturating_sub(1).min(n - 4);
        let nodes = [i0, i0 + 1, i0 + 2, i0 + 3];
        let mut w = [0.0; 4];
        for a in 0..4 {
            let mut l = 1.0;
            for b in 0..4 {
                if a != b {
                    l *= (t - nodes[b] as f64) / (nodes[a] as f64 - nodes[b] as f64);
                }
            }
            w[a] = l;
        }
        (i0, w)
    }

    fn interp_vec(&self, v: &[DVector<C64>], s: f64) -> DVector<C64> {
        let (i0, w) = self.weights(s);
        let mut out = &v[i0] * C64::new(w[0], 0.0);
        for a in 1..4 {
            out += &v[i0 + a] * C64::new(w[a], 0.0);
        }
        out
    }

    pub fn value(&self, s: f64) -> C64 {
        let (i0, w) = self.weights(s);
        (0..4).map(|a| self.values[i0 + a] * w[a]).sum()
    }

    /// Interpolated unit right vector.
    pub fn right_at(&self, s: f64) -> DVector<C64> {
        let r = self.interp_vec(&self.right, s);
        &r / C64::new(r.norm(), 0.0)
    }

    /// Interpolated rank-one projector (orthogonal if no left vectors are stored).
    pub fn projector(&self, s: f64) -> Result<Projector> {
        let r = self.right_at(s);
        match &self.left {
            Some(l) => Projector::rank_one(&r, &self.interp_vec(l, s)),
            None => Ok(Projector::onto(&r)),
        }
    }

    /// Smallest overlap between adjacent right vectors.
    pub fn min_adjacent_overlap(&self) -> f64 {
        self.right.windows(2).map(|w| w[0].dotc(&w[1]).abs()).fold(1.0, f64::min)
    }
}
