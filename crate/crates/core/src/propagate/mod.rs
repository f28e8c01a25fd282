//! Time evolution in rescaled time `s = t/τ`: Crank–Nicolson propagation,
//! adiabatic generators and a dense exponential oracle.
//!
//! Every generator is written Hamiltonian-style, `∂_s U = −iτ G(s) U`. A
//! semigroup generator `A(s)` enters as `G = −iA`, and the adiabatic correction
//! `A − (1/τ)[Ṗ,P]` becomes `G + (i/τ)[Ṗ,P]`.

use crate::error::{invalid, Error, Result};
use crate::lattice::ComplexOperator;
use crate::spectral::{dense_norm, projector_derivative, HermitianDecomposition, Projector};
use crate::C64;
use nalgebra::DMatrix;
use std::sync::Arc;

/// Largest dimension for which full propagators are materialized.
pub const FULL_PROPAGATOR_CAP: usize = 512;
/// Largest dimension accepted by [`expm_oracle`].
pub const ORACLE_CAP: usize = 256;

type Generator = Arc<dyn Fn(f64) -> Result<ComplexOperator> + Send + Sync>;

/// `s ↦ G(s)` on [0, 1] with constant dimension.
#[derive(Clone)]
pub struct DrivenFamily {
    dim: usize,
    hermitian: bool,
    /// Energy scale entering the step-size guideline.
    pub energy_scale: f64,
    generator: Generator,
}

impl std::fmt::Debug for DrivenFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DrivenFamily")
            .field("dim", &self.dim)
            .field("hermitian", &self.hermitian)
            .field("energy_scale", &self.energy_scale)
            .finish()
    }
}

impl DrivenFamily {
    pub fn new(
        dim: usize,
        hermitian: bool,
        generator: impl Fn(f64) -> Result<ComplexOperator> + Send + Sync + 'static,
    ) -> Self {
        DrivenFamily { dim, hermitian, energy_scale: 1.0, generator: Arc::new(generator) }
    }

    pub fn with_energy_scale(mut self, scale: f64) -> Self {
        self.energy_scale = scale;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn at(&self, s: f64) -> Result<ComplexOperator> {
        let g = (self.generator)(s)?;
        if g.dim() != self.dim {
            return Err(Error::InvalidInput(format!("generator dimension {} at s = {s}, expected {}", g.dim(), self.dim)));
        }
        Ok(g)
    }

    /// Sample check of the family invariants at `s`.
    pub fn check_sample(&self, s: f64) -> Result<()> {
        let g = self.at(s)?;
        if self.hermitian {
            let d = g.hermiticity_defect();
            let scale = g.max_abs_entry().max(1.0);
            if d > 1e-12 * scale {
                return Err(Error::Assumption(format!("generator not Hermitian at s = {s}: defect {d:.3e}")));
            }
        }
        Ok(())
    }

    /// Central difference `(G(s+ds) − G(s−ds)) / 2ds`, one-sided at the ends.
    pub fn derivative(&self, s: f64, ds: f64) -> Result<ComplexOperator> {
        let a = (s - ds).max(0.0);
        let b = (s + ds).min(1.0);
        Ok(self.at(b)?.sub(&self.at(a)?).scale(C64::new(1.0 / (b - a), 0.0)))
    }

    /// `G(s) − i·c`, i.e. an extra uniform decay rate `c` in the semigroup picture.
    pub fn damped(&self, c: f64) -> DrivenFamily {
        let inner = self.clone();
        DrivenFamily {
            dim: self.dim,
            hermitian: self.hermitian && c == 0.0,
            energy_scale: self.energy_scale,
            generator: Arc::new(move |s| Ok(inner.at(s)?.shift(C64::new(0.0, -c)).with_hermitian(c == 0.0))),
        }
    }

    /// `G(s) + extra(s)`.
    pub fn plus(&self, hermitian: bool, extra: impl Fn(f64) -> Result<ComplexOperator> + Send + Sync + 'static) -> DrivenFamily {
        let inner = self.clone();
        DrivenFamily {
            dim: self.dim,
            hermitian,
            energy_scale: self.energy_scale,
            generator: Arc::new(move |s| Ok(inner.at(s)?.add(&extra(s)?).with_hermitian(hermitian))),
        }
    }
}

/// What the propagator acts on.
#[derive(Clone, Debug)]
pub enum Initial {
    /// Full propagator (dim ≤ [`FULL_PROPAGATOR_CAP`]).
    Identity,
    /// Columns of the given block.
    Vectors(DMatrix<C64>),
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub s: f64,
    pub state: DMatrix<C64>,
    /// Operator norm of `state` (recorded for non-Hermitian generators).
    pub norm: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PropagationResult {
    pub snapshots: Vec<Snapshot>,
    pub tau: f64,
    pub ds: f64,
    pub method: &'static str,
    pub full_operator: bool,
    pub warnings: Vec<String>,
}

impl PropagationResult {
    pub fn s_values(&self) -> Vec<f64> {
        self.snapshots.iter().map(|x| x.s).collect()
    }

    pub fn final_state(&self) -> &DMatrix<C64> {
        &self.snapshots.last().expect("at least one snapshot").state
    }

    /// `sup_s ‖U^†U − 1‖` over full-operator snapshots (column orthonormality for blocks).
    pub fn unitarity_defect(&self) -> f64 {
        self.snapshots
            .iter()
            .map(|sn| {
                let g = sn.state.adjoint() * &sn.state;
                let id = DMatrix::<C64>::identity(g.nrows(), g.ncols());
                let reference = if self.full_operator { id } else { initial_gram(&self.snapshots[0], g.nrows()) };
                dense_norm(&(g - reference))
            })
            .fold(0.0, f64::max)
    }
}

fn initial_gram(first: &Snapshot, k: usize) -> DMatrix<C64> {
    if first.s == 0.0 {
        first.state.adjoint() * &first.state
    } else {
        DMatrix::identity(k, k)
    }
}

/// Step-size guideline `ds ≤ 10⁻² / max(1, τ·scale)`.
pub fn step_guideline(tau: f64, energy_scale: f64) -> f64 {
    1e-2 / (tau * energy_scale).max(1.0)
}

/// Crank–Nicolson propagation from s = 0 with midpoint sampling.
///
/// Steps are placed so that every point of `observe_at` is hit exactly; each
/// segment between observation points uses the largest uniform step not above `ds`.
pub fn propagate(family: &DrivenFamily, tau: f64, ds: f64, observe_at: &[f64], init: &Initial) -> Result<PropagationResult> {
    if !(ds > 0.0 && ds <= 1.0) {
        return invalid(format!("step ds = {ds} outside (0, 1]"));
    }
    if observe_at.iter().any(|&s| !(0.0..=1.0).contains(&s)) {
        return invalid("observation points must lie in [0, 1]");
    }
    let n = family.dim();
    let (mut u, full) = match init {
        Initial::Identity => {
            if n > FULL_PROPAGATOR_CAP {
                return invalid(format!("full propagator of dimension {n} exceeds cap {FULL_PROPAGATOR_CAP}"));
            }
            (DMatrix::<C64>::identity(n, n), true)
        }
        Initial::Vectors(v) => {
            if v.nrows() != n {
                return invalid(format!("initial block has {} rows, family dimension {n}", v.nrows()));
            }
            (v.clone(), false)
        }
    };
    let mut warnings = Vec::new();
    let guide = step_guideline(tau, family.energy_scale);
    if ds > guide {
        warnings.push(format!("ds = {ds:.3e} exceeds guideline {guide:.3e}"));
    }
    let mut obs: Vec<f64> = observe_at.to_vec();
    obs.sort_by(f64::total_cmp);
    obs.dedup();
    let record_norm = !family.is_hermitian();
    let mut snaps = Vec::with_capacity(obs.len());
    let mut s = 0.0;
    for &target in &obs {
        let len = target - s;
        if len > 0.0 {
            let steps = (len / ds - 1e-9).ceil().max(1.0) as usize;
            let h = len / steps as f64;
            for k in 0..steps {
                let mid = s + (k as f64 + 0.5) * h;
                let g = family.at(mid)?;
                let half = C64::new(0.0, 0.5 * tau * h);
                let solver = g.factor_shifted(C64::new(1.0, 0.0), half)?;
                let mut rhs = g.apply_mat(&u);
                rhs.zip_apply(&u, |r, x| *r = x - *r * half);
                u = solver.solve_mat(&rhs);
                if !u.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                    return Err(Error::Numerical(format!("non-finite state at s = {mid}")));
                }
            }
        }
        s = target;
        let norm = if record_norm { Some(dense_norm(&u)) } else { None };
        snaps.push(Snapshot { s: target, state: u.clone(), norm });
    }
    Ok(PropagationResult { snapshots: snaps, tau, ds, method: "crank-nicolson-midpoint", full_operator: full, warnings })
}

/// Propagation with step halving until the final snapshot changes by at most `tol`.
pub fn propagate_refined(
    family: &DrivenFamily,
    tau: f64,
    ds0: f64,
    observe_at: &[f64],
    init: &Initial,
    tol: f64,
    max_halvings: usize,
) -> Result<PropagationResult> {
    let mut ds = ds0;
    let mut prev = propagate(family, tau, ds, observe_at, init)?;
    for _ in 0..max_halvings {
        ds /= 2.0;
        let next = propagate(family, tau, ds, observe_at, init)?;
        let change = dense_norm(&(next.final_state() - prev.final_state()));
        prev = next;
        if change <= tol {
            return Ok(prev);
        }
    }
    prev.warnings.push(format!("refinement did not reach {tol:.1e} after {max_halvings} halvings"));
    Ok(prev)
}

/// Shared handle to a projector family.
pub type Branch = Arc<dyn Fn(f64) -> Result<Projector> + Send + Sync>;

/// `s ↦ G(s) + sign·(i/τ)[Ṗ(s), P(s)]`, with Ṗ from central differences of step `dp`.
pub fn adiabatic_generator(family: &DrivenFamily, branch: Branch, tau: f64, sign: f64, dp: f64) -> DrivenFamily {
    let hermitian = family.is_hermitian();
    family.plus(hermitian, move |s| {
        let p = branch(s)?;
        let pd = projector_derivative(|x| branch(x), s, dp)?;
        Ok(pd.operator.commutator(&p.operator).scale(C64::new(0.0, sign / tau)))
    })
}

/// `max_s ‖U_a(s,0)P(0) − P(s)U_a(s,0)‖`.
///
/// Full-operator snapshots are compared directly. For block snapshots started on an
/// orthonormal basis of Ran P(0) the defect is `‖(1 − P(s)) U_a(s,0) Q_0‖`, which
/// equals the operator defect for unitary evolution and orthogonal projectors.
pub fn intertwining_defect(ua: &PropagationResult, branch: &dyn Fn(f64) -> Result<Projector>) -> Result<f64> {
    let p0 = branch(0.0)?.operator;
    let mut worst = 0.0f64;
    for sn in &ua.snapshots {
        let ps = branch(sn.s)?.operator;
        let d = if ua.full_operator {
            let u = &sn.state;
            let lhs = ComplexOperator::from_dense(u.clone()).compose(&p0).to_dense();
            let rhs = ps.apply_mat(u);
            dense_norm(&(lhs - rhs))
        } else {
            let y = &sn.state;
            dense_norm(&(y - ps.apply_mat(y)))
        };
        worst = worst.max(d);
    }
    Ok(worst)
}

/// `W(s,0) = U_1(s,0)^{-1} U(s,0)` on a shared s-grid.
pub fn auxiliary_w(u_true: &PropagationResult, u1: &PropagationResult) -> Result<PropagationResult> {
    if u_true.snapshots.len() != u1.snapshots.len()
        || u_true.snapshots.iter().zip(&u1.snapshots).any(|(a, b)| (a.s - b.s).abs() > 1e-14)
    {
        return Err(Error::GridMismatch("snapshot s-grids differ".into()));
    }
    if !(u_true.full_operator && u1.full_operator) {
        return Err(Error::GridMismatch("auxiliary evolution needs full-operator snapshots".into()));
    }
    let snaps = u_true
        .snapshots
        .iter()
        .zip(&u1.snapshots)
        .map(|(a, b)| {
            let w = b
                .state
                .clone()
                .lu()
                .solve(&a.state)
                .ok_or_else(|| Error::Singular(format!("U_1 not invertible at s = {}", a.s)))?;
            Ok(Snapshot { s: a.s, state: w, norm: None })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PropagationResult {
        snapshots: snaps,
        tau: u_true.tau,
        ds: u_true.ds,
        method: "auxiliary-w",
        full_operator: true,
        warnings: Vec::new(),
    })
}

/// Generator of the auxiliary evolution, `U_1^† δv U_1`.
pub fn tilde_h(u1: &DMatrix<C64>, delta_v: &ComplexOperator) -> DMatrix<C64> {
    u1.adjoint() * delta_v.apply_mat(u1)
}

/// `e^{−iHt}`: eigendecomposition for Hermitian input, scaling and squaring otherwise.
pub fn expm_oracle(h: &ComplexOperator, t: f64) -> Result<DMatrix<C64>> {
    let n = h.dim();
    if n > ORACLE_CAP {
        return Err(Error::OracleCap { dim: n, cap: ORACLE_CAP });
    }
    if h.is_hermitian() {
        let dec = HermitianDecomposition::new(h)?;
        return Ok(dec.function_matrix(|e| C64::new(0.0, -e * t).exp()));
    }
    Ok(expm_dense(&(h.to_dense() * C64::new(0.0, -t))))
}

/// `e^A` by scaling, a degree-18 Taylor polynomial, and squaring.
pub fn expm_dense(a: &DMatrix<C64>) -> DMatrix<C64> {
    let n = a.nrows();
    let norm1 = (0..n).map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max);
    let squarings = if norm1 > 0.25 { (norm1 / 0.25).log2().ceil() as i32 } else { 0 };
    let scaled = a / C64::new(2f64.powi(squarings), 0.0);
    let mut result = DMatrix::<C64>::identity(n, n);
    let mut term = DMatrix::<C64>::identity(n, n);
    for k in 1..=18 {
        term = &term * &scaled / C64::new(k as f64, 0.0);
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Time-ordered product of midpoint exponentials with `substeps` per unit s.
pub fn time_ordered_oracle(family: &DrivenFamily, tau: f64, s_end: f64, substeps: usize) -> Result<DMatrix<C64>> {
    let n = family.dim();
    if n > ORACLE_CAP {
        return Err(Error::OracleCap { dim: n, cap: ORACLE_CAP });
    }
    let steps = ((s_end * substeps as f64).ceil() as usize).max(1);
    let h = s_end / steps as f64;
    let mut u = DMatrix::<C64>::identity(n, n);
    for k in 0..steps {
        let mid = (k as f64 + 0.5) * h;
        let g = family.at(mid)?;
        u = expm_oracle(&g, tau * h)? * u;
    }
    Ok(u)
}

/// `(s, ‖U(s,0)‖)` per snapshot.
pub fn semigroup_norm_profile(result: &PropagationResult) -> Vec<(f64, f64)> {
    result
        .snapshots
        .iter()
        .map(|sn| (sn.s, sn.norm.unwrap_or_else(|| dense_norm(&sn.state))))
        .collect()
}

#[cfg(test)]
mod tests;
