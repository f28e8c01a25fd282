//! Resonances as isolated eigenvalues of complex-dilated operators.
//!
//! The default model is a two-level closed system whose lower level `λ_0(s)` is
//! embedded in a one-dimensional continuum and coupled to it through level `a`:
//!
//! ```text
//! H_g(s) = H_c(s) ⊕ (−½Δ) + g·E(s)·(|a⟩⟨w| + |w⟩⟨a|),   w(x) = d·x·e^{−x²/2}
//! H_c(s) = R(0.8s)·diag(1 − 0.2s, 2.5)·R(0.8s)^T
//! ```
//!
//! Dilation acts on the continuum only: `−½Δ → e^{−2θ}(−½Δ)` and
//! `w(x) → e^{θ/2}w(e^θx)`. All dilated operators are complex symmetric, so the
//! metastable-state normalization and `a_g^N` use the bilinear pairing `u^T v`.

use crate::error::{invalid, Error, Result};
use crate::harness::fit::{fit_basis, fit_loglog, InlierRule, ScalingFit};
use crate::harness::report::{ExperimentReport, ReportRow};
use crate::lattice::{Band, ComplexOperator, Grid1D, LowRank, StateVector};
use crate::propagate::{
    adiabatic_generator, propagate, semigroup_norm_profile, Branch, DrivenFamily, Initial, PropagationResult,
};
use crate::spectral::{
    dense_eig_pairs, dense_norm, rs_defect, shift_invert_nearest, BranchTable, Contour, EigenPair, HermitianDecomposition,
    LinearMap, RsProjector,
};
use crate::C64;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::sync::Arc;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Parameters of the emitter model.
#[derive(Clone, Debug, PartialEq)]
pub struct EmitterModel {
    /// Continuum box is `[−half_width, half_width]` with Dirichlet walls.
    pub half_width: f64,
    pub spacing: f64,
    /// Amplitude `d` of the form factor `d·x·e^{−x²/2}`.
    pub form_amplitude: f64,
    pub level_a: f64,
    pub level_a_slope: f64,
    pub level_b: f64,
    /// Mixing angle rate: `H_c(s)` is rotated by `mixing_rate·s`.
    pub mixing_rate: f64,
    /// `E(s) = 1 + field_slope·s`.
    pub field_slope: f64,
}

impl Default for EmitterModel {
    fn default() -> Self {
        EmitterModel {
            half_width: 100.0,
            spacing: 0.1,
            form_amplitude: 1.5,
            level_a: 1.0,
            level_a_slope: -0.2,
            level_b: 2.5,
            mixing_rate: 0.8,
            field_slope: 0.5,
        }
    }
}

impl EmitterModel {
    /// Interior grid points of the continuum box.
    pub fn grid(&self) -> Result<Grid1D> {
        let n = (2.0 * self.half_width / self.spacing).round() as usize;
        if n < 4 {
            return invalid("continuum box holds fewer than 3 interior points");
        }
        Grid1D::symmetric(n - 1, self.half_width - self.spacing)
    }

    pub fn dim(&self) -> Result<usize> {
        Ok(self.grid()?.n_points() + 2)
    }

    pub fn lambda0(&self, s: f64) -> f64 {
        (self.level_a + self.level_a_slope * s).min(self.level_b)
    }

    fn closed(&self, s: f64) -> [[f64; 2]; 2] {
        let (sn, cs) = (self.mixing_rate * s).sin_cos();
        let (a, b) = (self.level_a + self.level_a_slope * s, self.level_b);
        [[cs * cs * a + sn * sn * b, cs * sn * (a - b)], [cs * sn * (a - b), sn * sn * a + cs * cs * b]]
    }

    /// Unperturbed closed eigenvector `ψ_0(s)` of the lower level.
    pub fn psi0(&self, s: f64) -> Result<DVector<C64>> {
        let mut v = DVector::zeros(self.dim()?);
        let (sn, cs) = (self.mixing_rate * s).sin_cos();
        let (a, b) = (self.level_a + self.level_a_slope * s, self.level_b);
        if a <= b {
            v[0] = c(cs, 0.0);
            v[1] = c(sn, 0.0);
        } else {
            v[0] = c(-sn, 0.0);
            v[1] = c(cs, 0.0);
        }
        Ok(v)
    }

    pub fn field(&self, s: f64) -> f64 {
        1.0 + self.field_slope * s
    }

    /// `H_0(s, θ)`: closed block and dilated kinetic energy, decoupled.
    pub fn h0(&self, s: f64, theta: C64) -> Result<ComplexOperator> {
        let grid = self.grid()?;
        let n = grid.n_points() + 2;
        let hc = self.closed(s);
        let k = (-2.0 * theta).exp() / (grid.h() * grid.h());
        let mut diag = vec![k; n];
        diag[0] = c(hc[0][0], 0.0);
        diag[1] = c(hc[1][1], 0.0);
        let mut off = vec![k * -0.5; n - 1];
        off[0] = c(hc[0][1], 0.0);
        off[1] = c(0.0, 0.0);
        Ok(ComplexOperator::from_band(Band::tridiagonal(&off, &diag, &off)).with_hermitian(theta == c(0.0, 0.0)))
    }

    /// Dilated, orthonormal-basis coupling vector `E(s)·e^{θ/2}w(e^θx_k)√h`.
    pub fn coupling_vector(&self, s: f64, theta: C64) -> Result<DVector<C64>> {
        let grid = self.grid()?;
        let (e, half, sq) = (theta.exp(), (0.5 * theta).exp(), grid.h().sqrt());
        let mut w = DVector::zeros(grid.n_points() + 2);
        for (k, x) in grid.points().into_iter().enumerate() {
            let z = e * x;
            let val = half * self.form_amplitude * self.field(s) * z * (-0.5 * z * z).exp() * sq;
            if !(val.re.is_finite() && val.im.is_finite()) {
                return Err(Error::NonFinitePotential { x });
            }
            w[k + 2] = val;
        }
        Ok(w)
    }

    /// `V(s, θ) = |a⟩w^T + w⟨a|` (complex symmetric, Hermitian for real θ).
    pub fn v(&self, s: f64, theta: C64) -> Result<ComplexOperator> {
        let w = self.coupling_vector(s, theta)?;
        let n = w.len();
        let mut ea = DVector::zeros(n);
        ea[0] = c(1.0, 0.0);
        let u = DMatrix::from_columns(&[ea.clone(), w.clone()]);
        let vv = DMatrix::from_columns(&[w.map(|z| z.conj()), ea]);
        Ok(ComplexOperator::from_low_rank(LowRank::new(u, vv)).with_hermitian(theta.im == 0.0))
    }
}

/// `H_g(s, θ) = H_0(s, θ) + g·V(s, θ)` for a fixed coupling.
#[derive(Clone, Debug)]
pub struct DilatedFamily {
    pub model: EmitterModel,
    pub g: f64,
}

/// A model that can be dilated and knows its unperturbed level.
pub trait Dilatable: Sync {
    fn dilated(&self, s: f64, theta: C64) -> Result<ComplexOperator>;
    fn unperturbed_level(&self, s: f64) -> C64;
}

impl Dilatable for DilatedFamily {
    fn dilated(&self, s: f64, theta: C64) -> Result<ComplexOperator> {
        let h = self.model.h0(s, theta)?.add(&self.model.v(s, theta)?.scale(c(self.g, 0.0)));
        Ok(h.with_hermitian(theta.im == 0.0))
    }
    fn unperturbed_level(&self, s: f64) -> C64 {
        c(self.model.lambda0(s), 0.0)
    }
}

impl DilatedFamily {
    pub fn new(model: EmitterModel, g: f64) -> Self {
        DilatedFamily { model, g }
    }

    /// Undeformed Hermitian family `s ↦ H_g(s)`.
    pub fn hermitian_family(&self) -> Result<DrivenFamily> {
        let me = self.clone();
        Ok(DrivenFamily::new(self.model.dim()?, true, move |s| me.dilated(s, c(0.0, 0.0))))
    }

    /// Dilated family `s ↦ H_g(s, θ)` (non-normal for `Im θ > 0`).
    pub fn dilated_family(&self, theta: C64) -> Result<DrivenFamily> {
        let me = self.clone();
        Ok(DrivenFamily::new(self.model.dim()?, theta.im == 0.0, move |s| me.dilated(s, theta)))
    }

    /// Circle around `λ_0(s)` of half its distance to the rest of `σ(H_0(s, θ))`.
    pub fn rs_contour(&self, s: f64, theta: C64) -> Result<Contour> {
        let lam = self.model.lambda0(s);
        let phi = 2.0 * theta.im;
        let to_continuum = if phi >= std::f64::consts::FRAC_PI_2 { lam } else { lam * phi.sin() };
        let to_other = (self.model.level_b - lam).abs();
        let d = to_continuum.min(to_other);
        if !(d > 0.0) {
            return Err(Error::ContourTooClose { distance: d, margin: 0.0 });
        }
        Contour::with_default_nodes(c(lam, 0.0), 0.5 * d)
    }
}

/// Eigenpair nearest `seed` with `Im λ ≤ 10⁻⁸`, or an error if farther than `capture_radius`.
///
/// Left vector normalized to `l^† r = 1`.
pub fn locate_resonance(
    model: &dyn Dilatable,
    s: f64,
    theta: C64,
    seed: Option<C64>,
    capture_radius: f64,
) -> Result<EigenPair> {
    let seed = seed.unwrap_or_else(|| model.unperturbed_level(s));
    let h = model.dilated(s, theta)?;
    let (lam, r) = shift_invert_nearest(&h, seed, 1e-12, 60)?;
    let distance = (lam - seed).norm();
    if distance > capture_radius || lam.im > 1e-8 {
        return Err(Error::ResonanceNotFound { distance, radius: capture_radius });
    }
    let (mu, l) = shift_invert_nearest(&h.adjoint(), lam.conj(), 1e-12, 60)?;
    if (mu.conj() - lam).norm() > 1e-8 * lam.norm().max(1.0) {
        return Err(Error::Numerical(format!("left and right eigenvalues disagree: {lam} vs {}", mu.conj())));
    }
    let d = l.dotc(&r);
    if d.norm() < 1e-14 {
        return Err(Error::Numerical("left and right resonance vectors are orthogonal".into()));
    }
    let l = l / d.conj();
    Ok(EigenPair { value: lam, vector: StateVector::new(r, 1.0), left_vector: Some(StateVector::new(l, 1.0)) })
}

/// θ-scan of a resonance eigenvalue.
#[derive(Clone, Debug)]
pub struct Plateau {
    pub theta_ims: Vec<f64>,
    pub values: Vec<C64>,
    /// `Im θ` with the smallest difference-quotient `|dλ/dθ|`.
    pub best_theta: f64,
    /// `max |λ(θ_i) − λ(θ_j)|` over the scan.
    pub stability: f64,
}

/// Scans `Im θ` and measures the spread of the tracked eigenvalue.
pub fn theta_plateau(model: &dyn Dilatable, s: f64, theta_ims: &[f64], threshold: f64, capture_radius: f64) -> Result<Plateau> {
    if theta_ims.len() < 2 {
        return invalid("theta scan needs at least 2 angles");
    }
    let mut values = Vec::with_capacity(theta_ims.len());
    let mut seed = None;
    for &t in theta_ims {
        let p = match locate_resonance(model, s, c(0.0, t), seed, capture_radius) {
            Ok(p) => p,
            Err(Error::ResonanceNotFound { distance, .. }) => {
                return Err(Error::NoPlateau { stability: distance, threshold });
            }
            Err(e) => return Err(e),
        };
        seed = Some(p.value);
        values.push(p.value);
    }
    let mut stability = 0.0f64;
    for a in &values {
        for b in &values {
            stability = stability.max((a - b).norm());
        }
    }
    let n = values.len();
    let mut best = (f64::INFINITY, theta_ims[0]);
    for k in 0..n {
        let (i, j) = (k.saturating_sub(1), (k + 1).min(n - 1));
        let d = (values[j] - values[i]).norm() / (theta_ims[j] - theta_ims[i]);
        if d < best.0 {
            best = (d, theta_ims[k]);
        }
    }
    if stability > threshold {
        return Err(Error::NoPlateau { stability, threshold });
    }
    Ok(Plateau { theta_ims: theta_ims.to_vec(), values, best_theta: best.1, stability })
}

fn bilinear(a: &DVector<C64>, b: &DVector<C64>) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// `ψ_g^N(s) = P_g^N ψ_0(s) / (ψ^T ψ)^{1/2}` in the frame dilated by `θ`.
///
/// For `θ = 0` only `N = 1` is defined (the level is embedded and no contour separates it);
/// it returns `ψ_0(s)`.
pub fn metastable_state(fam: &DilatedFamily, s: f64, theta: C64, order: usize) -> Result<DVector<C64>> {
    let psi0 = fam.model.psi0(s)?;
    if order == 1 || fam.g == 0.0 {
        return Ok(psi0);
    }
    if theta.im <= 0.0 {
        return invalid("metastable states beyond first order need Im theta > 0");
    }
    let p = RsProjector::new(&fam.model.h0(s, theta)?, &fam.model.v(s, theta)?, &fam.rs_contour(s, theta)?, fam.g, order)?;
    let phi = p.apply_mat(&DMatrix::from_column_slice(psi0.len(), 1, psi0.as_slice())).column(0).clone_owned();
    let nrm = bilinear(&phi, &phi).sqrt();
    let out = phi / nrm;
    // Bilinear normalization fixes ψ up to sign.
    Ok(if bilinear(&psi0, &out).re < 0.0 { -out } else { out })
}

/// `a_g^N = (ψ^T r)(l^† ψ) / ((l^† r)(ψ^T ψ))` for the resonance `(λ, r, l)` at angle `θ`.
pub fn survival_coefficient(psi: &DVector<C64>, pair: &EigenPair) -> Result<C64> {
    let r = &pair.vector.amps;
    let l = &pair.left_vector.as_ref().ok_or_else(|| Error::InvalidInput("resonance pair without left vector".into()))?.amps;
    Ok(bilinear(psi, r) * l.dotc(psi) / (l.dotc(r) * bilinear(psi, psi)))
}

/// Smooth bump equal to 1 on `[lo, hi]` and 0 outside `[lo − width, hi + width]`.
pub fn smooth_window(lo: f64, hi: f64, width: f64) -> impl Fn(f64) -> f64 {
    move |e| {
        let step = |t: f64| {
            let t = t.clamp(0.0, 1.0);
            let a = if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
            let b = if t < 1.0 { (-1.0 / (1.0 - t)).exp() } else { 0.0 };
            a / (a + b)
        };
        step((e - (lo - width)) / width) * step(((hi + width) - e) / width)
    }
}

/// `⟨ψ, e^{−iH_g(s)t} ξ(H_g(s)) ψ⟩` on the undeformed Hermitian operator.
pub fn survival_amplitude(
    fam: &DilatedFamily,
    s: f64,
    psi: &DVector<C64>,
    xi: &dyn Fn(f64) -> f64,
    t_grid: &[f64],
) -> Result<Vec<(f64, C64)>> {
    let dec = HermitianDecomposition::new(&fam.dilated(s, c(0.0, 0.0))?)?;
    Ok(survival_from_decomposition(&dec, psi, xi, t_grid))
}

/// Survival amplitude from a precomputed decomposition.
pub fn survival_from_decomposition(
    dec: &HermitianDecomposition,
    psi: &DVector<C64>,
    xi: &dyn Fn(f64) -> f64,
    t_grid: &[f64],
) -> Vec<(f64, C64)> {
    let coef = dec.vectors.adjoint() * psi;
    let weights: Vec<(f64, f64)> = dec.values.iter().zip(coef.iter()).map(|(&e, cf)| (e, xi(e) * cf.norm_sqr())).collect();
    t_grid
        .iter()
        .map(|&t| (t, weights.iter().map(|&(e, w)| c(0.0, -e * t).exp() * w).sum()))
        .collect()
}

/// Exponential fit of `|amplitude|` on `[t1, t2]`: `(rate, log-amplitude intercept)`.
pub fn fit_decay(samples: &[(f64, C64)], t1: f64, t2: f64) -> Result<(f64, f64)> {
    let (ts, ys): (Vec<f64>, Vec<f64>) =
        samples.iter().filter(|(t, _)| *t >= t1 && *t <= t2).map(|(t, a)| (*t, a.norm().ln())).unzip();
    let f = crate::harness::fit::fit_linear(&ts, &ys, &InlierRule::All)?;
    Ok((f.slope, f.intercept))
}

/// Survival check at one `(g, s)`.
#[derive(Clone, Debug)]
pub struct SurvivalCheck {
    pub lambda: C64,
    pub a_coefficient: C64,
    pub fitted_rate: f64,
    pub relative_rate_error: f64,
    pub residual_t1: f64,
    pub residual_t2: f64,
    pub samples: Vec<(f64, C64)>,
}

/// Compares the survival decay with `Im λ_g` from complex scaling (`N = 1`).
pub fn survival_check(fam: &DilatedFamily, s: f64, theta: C64, window: (f64, f64), n_t: usize) -> Result<SurvivalCheck> {
    let pair = locate_resonance(fam, s, theta, None, 0.25)?;
    let psi = fam.model.psi0(s)?;
    let lam0 = fam.model.lambda0(s);
    let xi = smooth_window(lam0 - 0.4, lam0 + 0.4, 0.3);
    let t_max = window.1;
    let t_grid: Vec<f64> = (0..=n_t).map(|k| t_max * k as f64 / n_t as f64).collect();
    let samples = survival_amplitude(fam, s, &psi, &xi, &t_grid)?;
    let (rate, _) = fit_decay(&samples, window.0, window.1)?;
    let a = survival_coefficient(&psi, &pair)?;
    let resid = |t: f64| {
        let (_, amp) = samples.iter().min_by(|x, y| (x.0 - t).abs().total_cmp(&(y.0 - t).abs())).expect("samples");
        (amp - a * (c(0.0, -1.0) * pair.value * t).exp()).norm()
    };
    Ok(SurvivalCheck {
        lambda: pair.value,
        a_coefficient: a,
        fitted_rate: rate,
        relative_rate_error: (rate / pair.value.im - 1.0).abs(),
        residual_t1: resid(window.0),
        residual_t2: resid(window.1),
        samples,
    })
}

/// One point of the RS sweep.
#[derive(Clone, Debug)]
pub struct RsSample {
    pub g: f64,
    pub order: usize,
    pub defect: f64,
    pub a_minus_one: f64,
}

/// `‖(P_g^N)² − P_g^N‖` and `|a_g^N − 1|` on a g-sweep at fixed `(s, θ)`.
pub fn rs_sweep(model: &EmitterModel, s: f64, theta: C64, gs: &[f64], order: usize) -> Result<Vec<RsSample>> {
    gs.par_iter()
        .map(|&g| {
            let fam = DilatedFamily::new(model.clone(), g);
            let p = RsProjector::new(&model.h0(s, theta)?, &model.v(s, theta)?, &fam.rs_contour(s, theta)?, g, order)?;
            let defect = rs_defect(&p);
            let psi = metastable_state(&fam, s, theta, order)?;
            let pair = locate_resonance(&fam, s, theta, None, 0.25)?;
            let a = survival_coefficient(&psi, &pair)?;
            Ok(RsSample { g, order, defect, a_minus_one: (a - 1.0).norm() })
        })
        .collect()
}

/// `τ_l(g) = 1 / max_s |Im λ_g(s)|` over `s_samples`.
pub fn lifetime(fam: &DilatedFamily, theta: C64, s_samples: &[f64]) -> Result<f64> {
    let mut worst = 0.0f64;
    for &s in s_samples {
        worst = worst.max(locate_resonance(fam, s, theta, None, 0.25)?.value.im.abs());
    }
    Ok(if worst > 0.0 { 1.0 / worst } else { f64::INFINITY })
}

/// One `(g, τ)` cell of the isolated-resonance sweep.
#[derive(Clone, Debug)]
pub struct IsolatedCell {
    pub g: f64,
    pub tau: f64,
    pub err: f64,
    pub s: Vec<f64>,
    pub p: Vec<f64>,
    pub p_tilde: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct IsolatedReport {
    pub cells: Vec<IsolatedCell>,
    /// `τ_l(g)` per coupling.
    pub lifetimes: Vec<(f64, f64)>,
    /// Slope of `err` against τ per coupling (when ≥ 3 taus).
    pub slopes: Vec<(f64, Option<ScalingFit>)>,
    /// `(a, b, c)` of `err ≈ a/τ + b g^N τ + c τ/τ_l(g)` with relative residual.
    pub mixture: Option<([f64; 3], f64)>,
}

/// Default vector-propagation step.
pub fn default_ds(tau: f64) -> f64 {
    (0.05 / tau).min(1e-2)
}

/// `sup_s |⟨Uψ, P Uψ⟩ − ⟨ψ_g^N(s), P ψ_g^N(s)⟩|` with `P = |ψ_g^N(0)⟩⟨ψ_g^N(0)|` (`N = 1`).
pub fn isolated_cell(fam: &DilatedFamily, tau: f64, n_obs: usize, ds: f64) -> Result<IsolatedCell> {
    let hf = fam.hermitian_family()?;
    let psi_init = metastable_state(fam, 0.0, c(0.0, 0.0), 1)?;
    let obs: Vec<f64> = (0..=n_obs).map(|k| k as f64 / n_obs as f64).collect();
    let init = Initial::Vectors(DMatrix::from_column_slice(psi_init.len(), 1, psi_init.as_slice()));
    let res = propagate(&hf, tau, ds, &obs, &init)?;
    let mut err = 0.0f64;
    let (mut p, mut pt) = (Vec::new(), Vec::new());
    for sn in &res.snapshots {
        let u = sn.state.column(0);
        let ps = psi_init.dotc(&u).norm_sqr();
        let inst = metastable_state(fam, sn.s, c(0.0, 0.0), 1)?;
        let pts = psi_init.dotc(&inst).norm_sqr();
        err = err.max((ps - pts).abs());
        p.push(ps);
        pt.push(pts);
    }
    let mut warnings = res.warnings;
    if fam.g > 0.0 && tau * fam.g * fam.g > 1.0 {
        warnings.push(format!("tau = {tau} not << g^-2 = {:.3e}", 1.0 / (fam.g * fam.g)));
    }
    Ok(IsolatedCell { g: fam.g, tau, err, s: obs, p, p_tilde: pt, warnings })
}

/// `(g, τ)` sweep of the metastable-state comparison.
pub fn run_isolated_experiment(
    model: &EmitterModel,
    gs: &[f64],
    taus: &[f64],
    theta: C64,
    n_obs: usize,
    order: usize,
) -> Result<IsolatedReport> {
    if gs.is_empty() || taus.is_empty() {
        return invalid("isolated sweep needs nonempty g and tau lists");
    }
    if order != 1 {
        return invalid("undeformed propagation compares against N = 1 metastable states");
    }
    let cellspec: Vec<(f64, f64)> = gs.iter().flat_map(|&g| taus.iter().map(move |&t| (g, t))).collect();
    let mut cells = cellspec
        .par_iter()
        .map(|&(g, tau)| isolated_cell(&DilatedFamily::new(model.clone(), g), tau, n_obs, default_ds(tau)))
        .collect::<Result<Vec<_>>>()?;
    cells.sort_by(|a, b| a.g.total_cmp(&b.g).then(a.tau.total_cmp(&b.tau)));
    let s_samples = [0.0, 0.25, 0.5, 0.75, 1.0];
    let lifetimes = gs
        .iter()
        .map(|&g| {
            if g == 0.0 {
                Ok((g, f64::INFINITY))
            } else {
                lifetime(&DilatedFamily::new(model.clone(), g), theta, &s_samples).map(|t| (g, t))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let slopes = gs
        .iter()
        .map(|&g| {
            let (x, y): (Vec<f64>, Vec<f64>) = cells.iter().filter(|c| c.g == g).map(|c| (c.tau, c.err)).unzip();
            (g, fit_loglog(&x, &y, &InlierRule::All).ok())
        })
        .collect();
    let tl = |g: f64| lifetimes.iter().find(|x| x.0 == g).map(|x| x.1).unwrap_or(f64::INFINITY);
    let xs: Vec<(f64, f64)> = cells.iter().map(|c| (c.g, c.tau)).collect();
    let ys: Vec<f64> = cells.iter().map(|c| c.err).collect();
    let mixture = if cells.len() >= 3 {
        let idx: Vec<f64> = (0..cells.len()).map(|i| i as f64).collect();
        let n = order as i32;
        let b0 = |i: f64| 1.0 / xs[i as usize].1;
        let b1 = |i: f64| xs[i as usize].0.powi(n) * xs[i as usize].1;
        let b2 = |i: f64| {
            let t = tl(xs[i as usize].0);
            if t.is_finite() {
                xs[i as usize].1 / t
            } else {
                0.0
            }
        };
        fit_basis(&idx, &ys, &[&b0, &b1, &b2]).ok().map(|(c, r)| ([c[0], c[1], c[2]], r))
    } else {
        None
    };
    Ok(IsolatedReport { cells, lifetimes, slopes, mixture })
}

impl IsolatedReport {
    pub fn to_report(&self, experiment: &str) -> ExperimentReport {
        let mut rep = ExperimentReport::default();
        for cell in &self.cells {
            rep.rows.push(ReportRow::new(experiment, "err", cell.err).g(cell.g).tau(cell.tau));
            for (k, &s) in cell.s.iter().enumerate() {
                rep.rows.push(ReportRow::new(experiment, "p_s", cell.p[k]).g(cell.g).tau(cell.tau).s(s));
                rep.rows.push(ReportRow::new(experiment, "p_tilde", cell.p_tilde[k]).g(cell.g).tau(cell.tau).s(s));
            }
            rep.warnings.extend(cell.warnings.iter().map(|w| format!("g {} tau {}: {w}", cell.g, cell.tau)));
        }
        for &(g, t) in &self.lifetimes {
            rep.rows.push(ReportRow::new(experiment, "tau_l", t).g(g));
        }
        for (g, f) in &self.slopes {
            if let Some(f) = f {
                rep.fits.insert(format!("{experiment}_err_vs_tau_g{g}"), f.clone());
            }
            rep.plot(
                &format!("{experiment}_err_vs_tau_g{g}"),
                "tau",
                "err",
                self.cells.iter().filter(|c| c.g == *g).map(|c| (c.tau, c.err)).collect(),
            );
        }
        if let Some((m, r)) = self.mixture {
            for (name, v) in ["mixture_a", "mixture_b", "mixture_c"].iter().zip(m) {
                rep.rows.push(ReportRow::new(experiment, name, v));
            }
            rep.rows.push(ReportRow::new(experiment, "mixture_residual", r));
        }
        rep
    }
}

/// Upper-triangular test family `V(s)T(s)V(s)^†`, Hamiltonian-style (`∂U = −iτG U`).
///
/// `T(s)` has diagonal `λ_1(s) = 0.3s` (tracked) and `1.2 − 0.3i`, `1.9 − 0.5i`,
/// `2.6 − 0.2i`, superdiagonal `0.4`; `V(s) = exp(sK)` with a fixed anti-Hermitian `K`.
/// `growth` is added to the imaginary part of the tracked eigenvalue.
pub fn triangular_family(growth: f64, normal: bool) -> DrivenFamily {
    let k = DMatrix::from_fn(4, 4, |i, j| {
        if i == j {
            c(0.0, 0.1 * i as f64)
        } else {
            let a = 0.3 + 0.1 * (i + j) as f64;
            if i < j {
                c(a, 0.2)
            } else {
                c(-a, 0.2)
            }
        }
    });
    DrivenFamily::new(4, false, move |s| {
        let v = crate::propagate::expm_dense(&(&k * c(s, 0.0)));
        let diag = [c(0.3 * s, growth), c(1.2, -0.3), c(1.9, -0.5), c(2.6, -0.2)];
        let t = DMatrix::from_fn(4, 4, |i, j| {
            if i == j {
                diag[i]
            } else if j == i + 1 && !normal {
                c(0.4, 0.0)
            } else {
                c(0.0, 0.0)
            }
        });
        Ok(ComplexOperator::from_dense(&v * t * v.adjoint()))
    })
}

/// Oblique branch of the eigenvalue nearest `seed(s)` with a minimum gap check.
pub fn oblique_branch(fam: &DrivenFamily, seed: impl Fn(f64) -> C64, min_gap: f64, n_nodes: usize) -> Result<BranchTable> {
    BranchTable::build(n_nodes, |s, _| {
        let g = fam.at(s)?.to_dense();
        let pairs = dense_eig_pairs(&g)?;
        let target = seed(s);
        let (idx, _) = pairs
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1.value - target).norm().total_cmp(&(b.1.value - target).norm()))
            .ok_or_else(|| Error::Numerical("no eigenpairs".into()))?;
        let gap = pairs
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != idx)
            .map(|(_, p)| (p.value - pairs[idx].value).norm())
            .fold(f64::INFINITY, f64::min);
        if gap < min_gap {
            return Err(Error::GapViolated { gap, required: min_gap, s });
        }
        Ok(pairs[idx].clone())
    })
}

/// Result of [`nonnormal_adiabatic_check`].
#[derive(Clone, Debug)]
pub struct NonnormalCheck {
    pub taus: Vec<f64>,
    pub errs: Vec<f64>,
    pub fit: ScalingFit,
    /// Growth rate fitted from `log‖U_τ(s,0)‖` against `τs` (0 for bounded semigroups).
    pub gamma: f64,
    /// Smallest `C` with `err ≤ C e^{τγ}/τ` on the sweep.
    pub envelope_constant: f64,
}

/// `sup_s ‖U_τ(s,0) − U_a(s,0)‖` against τ for a non-normal family and a tracked branch.
pub fn nonnormal_adiabatic_check(fam: &DrivenFamily, branch: Branch, taus: &[f64], n_obs: usize) -> Result<NonnormalCheck> {
    let obs: Vec<f64> = (1..=n_obs).map(|k| k as f64 / n_obs as f64).collect();
    let mut out = taus
        .par_iter()
        .map(|&tau| -> Result<(f64, f64, f64)> {
            let ds = (0.05 / tau).min(1e-3);
            let ua_fam = adiabatic_generator(fam, branch.clone(), tau, 1.0, 1e-4);
            let u = propagate(fam, tau, ds, &obs, &Initial::Identity)?;
            let ua = propagate(&ua_fam, tau, ds, &obs, &Initial::Identity)?;
            let err = u.snapshots.iter().zip(&ua.snapshots).map(|(a, b)| dense_norm(&(&a.state - &b.state))).fold(0.0, f64::max);
            Ok((tau, err, growth_rate(&u)))
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    let taus: Vec<f64> = out.iter().map(|x| x.0).collect();
    let errs: Vec<f64> = out.iter().map(|x| x.1).collect();
    let gamma = out.iter().map(|x| x.2).fold(0.0f64, f64::max);
    let envelope_constant = out.iter().map(|&(t, e, _)| e * t / (t * gamma).exp()).fold(0.0f64, f64::max);
    let fit = fit_loglog(&taus, &errs, &InlierRule::All)?;
    Ok(NonnormalCheck { taus, errs, fit, gamma, envelope_constant })
}

/// Least-squares slope of `log‖U(s,0)‖` against `τs`, clamped at 0.
pub fn growth_rate(res: &PropagationResult) -> f64 {
    let prof = semigroup_norm_profile(res);
    let xs: Vec<f64> = prof.iter().map(|(s, _)| s * res.tau).collect();
    let ys: Vec<f64> = prof.iter().map(|(_, n)| n.ln()).collect();
    crate::harness::fit::fit_linear(&xs, &ys, &InlierRule::All).map(|f| f.slope.max(0.0)).unwrap_or(0.0)
}

/// Branch handle from a table.
pub fn table_branch(t: BranchTable) -> Branch {
    let t = Arc::new(t);
    Arc::new(move |s| t.projector(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::dense_eigenvalues;

    fn small() -> EmitterModel {
        EmitterModel { half_width: 20.0, spacing: 0.4, ..Default::default() }
    }

    #[test]
    fn model_dimensions_and_symmetry() {
        let m = EmitterModel::default();
        assert_eq!(m.dim().unwrap(), 2001);
        let f = DilatedFamily::new(small(), 0.1);
        let th = c(0.0, 0.3);
        let a = f.dilated(0.4, th).unwrap().to_dense();
        assert!((a.transpose() - &a).camax() < 1e-14);
        let b = f.dilated(0.4, th.conj()).unwrap().to_dense();
        assert!((a.adjoint() - b).camax() < 1e-12);
        assert!(f.dilated(0.4, c(0.0, 0.0)).unwrap().hermiticity_defect() < 1e-14);
    }

    #[test]
    fn bound_level_is_theta_invariant_at_zero_coupling() {
        let f = DilatedFamily::new(small(), 0.0);
        for t in [0.0, 0.2, 0.35] {
            let p = locate_resonance(&f, 0.3, c(0.0, t), None, 0.1).unwrap();
            assert!((p.value - c(f.model.lambda0(0.3), 0.0)).norm() < 1e-8, "{}", p.value);
        }
    }

    #[test]
    fn exactly_one_resonance_in_disc() {
        let f = DilatedFamily::new(small(), 0.1);
        let th = c(0.0, 0.3);
        let ev = dense_eigenvalues(&f.dilated(0.0, th).unwrap().to_dense()).unwrap();
        let inside: Vec<C64> = ev.into_iter().filter(|z| (z - c(1.0, 0.0)).norm() < 0.25).collect();
        assert_eq!(inside.len(), 1, "{inside:?}");
        assert!(inside[0].im < 0.0);
        let p = locate_resonance(&f, 0.0, th, None, 0.25).unwrap();
        assert!((p.value - inside[0]).norm() < 1e-9);
        assert!(p.relative_residual(&f.dilated(0.0, th).unwrap()) < 1e-8);
    }

    #[test]
    fn free_continuum_has_no_plateau() {
        struct Free(EmitterModel);
        impl Dilatable for Free {
            fn dilated(&self, s: f64, theta: C64) -> Result<ComplexOperator> {
                self.0.h0(s, theta)
            }
            fn unperturbed_level(&self, _: f64) -> C64 {
                c(0.5, -0.1)
            }
        }
        let m = EmitterModel { level_a: 50.0, level_b: 60.0, level_a_slope: 0.0, ..small() };
        let r = theta_plateau(&Free(m), 0.0, &[0.2, 0.25, 0.3], 1e-4, 10.0);
        assert!(matches!(r, Err(Error::NoPlateau { .. })), "{r:?}");
    }

    #[test]
    fn zero_coupling_plateau_is_flat() {
        let f = DilatedFamily::new(small(), 0.0);
        let p = theta_plateau(&f, 0.5, &[0.2, 0.3, 0.4], 1e-4, 0.1).unwrap();
        assert!(p.stability < 1e-10);
    }

    #[test]
    fn metastable_state_limits() {
        let f = DilatedFamily::new(small(), 0.0);
        let th = c(0.0, 0.3);
        assert_eq!(metastable_state(&f, 0.2, th, 2).unwrap(), f.model.psi0(0.2).unwrap());
        let f = DilatedFamily::new(small(), 0.05);
        assert!(metastable_state(&f, 0.2, c(0.0, 0.0), 2).is_err());
        let psi = metastable_state(&f, 0.2, th, 2).unwrap();
        assert!((bilinear(&psi, &psi) - 1.0).norm() < 1e-12);
    }

    #[test]
    fn metastable_overlap_scaling() {
        let th = c(0.0, 0.3);
        let gs = [0.02, 0.04, 0.08];
        let (mut dev, mut diff) = (Vec::new(), Vec::new());
        for &g in &gs {
            let f = DilatedFamily::new(small(), g);
            let psi0 = f.model.psi0(0.0).unwrap();
            let p2 = metastable_state(&f, 0.0, th, 2).unwrap();
            dev.push((1.0 - bilinear(&psi0, &p2)).norm());
            diff.push((&p2 - &psi0).norm());
        }
        let s2 = fit_loglog(&gs, &dev, &InlierRule::All).unwrap().slope;
        let s1 = fit_loglog(&gs, &diff, &InlierRule::All).unwrap().slope;
        assert!((s2 - 2.0).abs() < 0.3, "{s2}");
        assert!((s1 - 1.0).abs() < 0.3, "{s1}");
    }

    #[test]
    fn window_is_one_inside() {
        let xi = smooth_window(0.6, 1.4, 0.3);
        assert_eq!(xi(1.0), 1.0);
        assert_eq!(xi(0.2), 0.0);
        assert!(xi(0.45) > 0.0 && xi(0.45) < 1.0);
    }

    #[test]
    fn survival_starts_at_one() {
        let f = DilatedFamily::new(small(), 0.05);
        let psi = f.model.psi0(0.0).unwrap();
        let a = survival_amplitude(&f, 0.0, &psi, &|_| 1.0, &[0.0]).unwrap();
        assert!((a[0].1 - c(1.0, 0.0)).norm() < 1e-10);
    }

    #[test]
    fn triangular_family_gap_and_slope() {
        let fam = triangular_family(0.0, false);
        let table = oblique_branch(&fam, |s| c(0.3 * s, 0.0), 0.5, 41).unwrap();
        let chk = nonnormal_adiabatic_check(&fam, table_branch(table), &[16.0, 32.0, 64.0], 8).unwrap();
        assert!((chk.fit.slope + 1.0).abs() < 0.2, "{:?}", chk.errs);
        assert!(chk.gamma < 1e-3);
    }

    #[test]
    fn normal_family_slope() {
        let fam = triangular_family(0.0, true);
        let table = oblique_branch(&fam, |s| c(0.3 * s, 0.0), 0.5, 41).unwrap();
        let chk = nonnormal_adiabatic_check(&fam, table_branch(table), &[16.0, 32.0, 64.0], 8).unwrap();
        assert!((chk.fit.slope + 1.0).abs() < 0.2, "{:?}", chk.errs);
    }

    #[test]
    fn gap_violation_is_reported() {
        let fam = triangular_family(0.0, false);
        let r = oblique_branch(&fam, |s| c(0.3 * s, 0.0), 5.0, 8);
        assert!(matches!(r, Err(Error::GapViolated { .. })));
    }

    #[test]
    fn growing_family_reports_envelope() {
        let fam = triangular_family(0.02, false);
        let table = oblique_branch(&fam, |s| c(0.3 * s, 0.02), 0.5, 41).unwrap();
        let chk = nonnormal_adiabatic_check(&fam, table_branch(table), &[8.0, 16.0, 32.0], 8).unwrap();
        assert!(chk.gamma > 0.01 && chk.gamma < 0.03, "{}", chk.gamma);
        assert!(chk.envelope_constant.is_finite());
    }
}
