//! Shape resonances: a slowly deformed well `θ²v(x/θ, s)` that is harmonic near
//! the origin and leaks through a barrier of height `~θ²`.
//!
//! The potential is split as `H = H_0 + w + δv` where `H_0` is the harmonic
//! oscillator with frequency `Ω(s)`, `w` is the cut-off anharmonic part near the
//! origin and `δv` lives outside `|x| ≤ ½(εθ)^{1/3}`. `H_1 = H_0 + w` is confining,
//! its eigenprojections are the metastable branches.

use crate::error::{invalid, Error, Result};
use crate::harness::fit::{fit_basis, fit_loglog, fit_linear, InlierRule, ScalingFit};
use crate::harness::report::{ExperimentReport, ReportRow};
use crate::lattice::{build_hamiltonian, ComplexOperator, Grid1D};
use crate::propagate::{
    adiabatic_generator, propagate, step_guideline, Branch, DrivenFamily, Initial, PropagationResult,
};
use crate::spectral::{dense_norm, hermitian_eigs, BranchTable, HermitianDecomposition, Projector};
use crate::C64;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::sync::Arc;

/// Lower bound of `Ω(s) = 1 + s/2` on [0, 1].
pub const OMEGA_MIN: f64 = 1.0;

/// Well profile `v(y, s)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `½Ω²(s)y²e^{−y²}`: bounded, non-confining.
    GaussianDamped,
    /// `½Ω²(s)y²` everywhere; `w = δv = 0`.
    Harmonic,
}

/// `v_θ(x, s) = θ²v(x/θ, s)` with cutoff scale `ε`.
#[derive(Clone, Debug, PartialEq)]
pub struct WellFamily {
    pub theta: f64,
    pub epsilon: f64,
    pub profile: Profile,
    /// Largest accepted constant `c` in `max g|v_θ − ½Ω²x²| ≤ cε`.
    pub c_max: f64,
    /// Overrides `Ω(s) = 1 + s/2` with a constant when set.
    pub fixed_omega: Option<f64>,
}

impl WellFamily {
    pub fn new(theta: f64, epsilon: f64, profile: Profile) -> Result<Self> {
        if !(theta >= 1.0 && theta.is_finite()) {
            return invalid(format!("well scale theta must be >= 1, got {theta}"));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return invalid(format!("cutoff scale epsilon must be positive, got {epsilon}"));
        }
        Ok(WellFamily { theta, epsilon, profile, c_max: 1.0, fixed_omega: None })
    }

    pub fn omega(&self, s: f64) -> f64 {
        self.fixed_omega.unwrap_or(1.0 + 0.5 * s)
    }

    pub fn harmonic(&self, x: f64, s: f64) -> f64 {
        let om = self.omega(s);
        0.5 * om * om * x * x
    }

    pub fn potential(&self, x: f64, s: f64) -> f64 {
        match self.profile {
            Profile::Harmonic => self.harmonic(x, s),
            Profile::GaussianDamped => self.harmonic(x, s) * (-(x / self.theta).powi(2)).exp(),
        }
    }

    /// `(εθ)^{1/3}`: the cutoff `g_{ε,θ}` is 1 inside half of it and 0 outside it.
    pub fn cutoff_radius(&self) -> f64 {
        (self.epsilon * self.theta).cbrt()
    }

    /// Full Hamiltonian `−½Δ + v_θ(·, s)`.
    pub fn hamiltonian(&self, grid: &Grid1D, s: f64) -> Result<ComplexOperator> {
        build_hamiltonian(grid, |x| self.potential(x, s))
    }

    /// `H_1(s) = H_0(s) + w(s)`.
    pub fn h1(&self, grid: &Grid1D, s: f64) -> Result<ComplexOperator> {
        build_hamiltonian(grid, |x| {
            let harm = self.harmonic(x, s);
            harm + cutoff_g(x, self.epsilon, self.theta) * (self.potential(x, s) - harm)
        })
    }

    pub fn family(&self, grid: &Grid1D) -> DrivenFamily {
        let (w, g) = (self.clone(), *grid);
        DrivenFamily::new(grid.n_points(), true, move |s| w.hamiltonian(&g, s))
    }

    pub fn h1_family(&self, grid: &Grid1D) -> DrivenFamily {
        let (w, g) = (self.clone(), *grid);
        DrivenFamily::new(grid.n_points(), true, move |s| w.h1(&g, s))
    }

    /// `v(0, s) = 0` and `Ω(s) ≥ Ω_0` on a sample of s.
    pub fn check_assumptions(&self) -> Result<()> {
        for k in 0..=20 {
            let s = k as f64 / 20.0;
            if self.potential(0.0, s) != 0.0 {
                return Err(Error::Assumption(format!("v(0, {s}) != 0")));
            }
            if self.omega(s) < OMEGA_MIN.min(self.fixed_omega.unwrap_or(OMEGA_MIN)) {
                return Err(Error::Assumption(format!("Omega({s}) below Omega_0")));
            }
        }
        Ok(())
    }
}

fn bump_h(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// `g(x/(εθ)^{1/3})` with the C^∞ partition `g(u) = 1` for `|u| ≤ ½`, `0` for `|u| ≥ 1`.
pub fn cutoff_g(x: f64, epsilon: f64, theta: f64) -> f64 {
    let u = (x / (epsilon * theta).cbrt()).abs();
    if u <= 0.5 {
        1.0
    } else if u >= 1.0 {
        0.0
    } else {
        let a = bump_h((1.0 - u) / 0.5);
        let b = bump_h((u - 0.5) / 0.5);
        a / (a + b)
    }
}

/// `H = H_0 + w + δv` at one s.
#[derive(Clone, Debug)]
pub struct Splitting {
    pub h0: ComplexOperator,
    pub h1: ComplexOperator,
    pub delta_v: ComplexOperator,
    /// Samples `w(x_k)` and `δv(x_k)`.
    pub w: Vec<f64>,
    pub dv: Vec<f64>,
    /// Measured `max |w| / ε`.
    pub a3_constant: f64,
}

pub fn split_potential(well: &WellFamily, grid: &Grid1D, s: f64) -> Result<Splitting> {
    let xs = grid.points();
    let mut w = Vec::with_capacity(xs.len());
    let mut dv = Vec::with_capacity(xs.len());
    for &x in &xs {
        let diff = well.potential(x, s) - well.harmonic(x, s);
        let g = cutoff_g(x, well.epsilon, well.theta);
        w.push(g * diff);
        dv.push((1.0 - g) * diff);
    }
    let w_max = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let c = w_max / well.epsilon;
    if c > well.c_max {
        return Err(Error::Assumption(format!(
            "near-origin bound violated: max |w| = {w_max:.4e} = {c:.3}·epsilon exceeds {}·epsilon",
            well.c_max
        )));
    }
    let h0 = build_hamiltonian(grid, |x| well.harmonic(x, s))?;
    let h1 = h0.add(&ComplexOperator::from_real_diagonal(&w)).with_hermitian(true);
    Ok(Splitting { h0, h1, delta_v: ComplexOperator::from_real_diagonal(&dv).with_hermitian(true), w, dv, a3_constant: c })
}

/// `f(P, A) = √Tr(P A^†(1−P) A)`, clamped at 0.
pub fn f_metric(p: &Projector, a: &ComplexOperator) -> f64 {
    let t = match (p.operator.is_pure_low_rank(), p.operator.low_rank()) {
        (true, Some(l)) => {
            let au = a.apply_mat(&l.u);
            let av = a.apply_mat(&l.v);
            let first = (av.adjoint() * &au).trace();
            let second = ((av.adjoint() * &l.u) * (l.v.adjoint() * &au)).trace();
            first - second
        }
        _ => {
            let pm = p.operator.to_dense();
            let am = a.to_dense();
            let n = pm.nrows();
            let q = DMatrix::<C64>::identity(n, n) - &pm;
            (pm * am.adjoint() * q * am).trace()
        }
    };
    t.re.max(0.0).sqrt()
}

/// `sin_*`: 0 below 0, `sin` on [0, π/2], 1 above.
pub fn sin_star(x: f64) -> f64 {
    if x < 0.0 {
        0.0
    } else if x > std::f64::consts::FRAC_PI_2 {
        1.0
    } else {
        x.sin()
    }
}

/// `(sin_*²(arcsin√p − shift), sin_*²(arcsin√p + shift))` with `shift = 2τ∫f`.
pub fn uncertainty_bounds(p_ref: f64, shift: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&p_ref) {
        return invalid(format!("reference probability {p_ref} outside [0, 1]"));
    }
    if !(shift >= 0.0) {
        return invalid(format!("uncertainty shift must be nonnegative, got {shift}"));
    }
    let a = p_ref.sqrt().asin();
    Ok((sin_star(a - shift).powi(2), sin_star(a + shift).powi(2)))
}

/// Initial mixture `ρ_0 = Σ c_n P_1^n(0)` over the lowest levels of `H_1(0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetastableEnsemble {
    pub weights: Vec<f64>,
}

impl Default for MetastableEnsemble {
    fn default() -> Self {
        MetastableEnsemble { weights: vec![0.7, 0.3] }
    }
}

impl MetastableEnsemble {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|&c| !(c >= 0.0)) {
            return invalid("ensemble weights must be nonempty and nonnegative");
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return invalid(format!("ensemble weights sum to {total}, expected 1"));
        }
        Ok(MetastableEnsemble { weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Lowest `N` eigenvectors of `h1` as unit coefficient columns.
    pub fn vectors(&self, h1: &ComplexOperator) -> Result<DMatrix<C64>> {
        let pairs = hermitian_eigs(h1, self.len(), 1.0)?;
        let mut m = DMatrix::zeros(h1.dim(), self.len());
        for (k, p) in pairs.iter().enumerate() {
            m.set_column(k, &p.vector.amps);
        }
        Ok(m)
    }

    /// Branch projectors `P_1^n` of `h1`; checked mutually orthogonal.
    pub fn projectors(&self, h1: &ComplexOperator) -> Result<Vec<Projector>> {
        let v = self.vectors(h1)?;
        let gram = v.adjoint() * &v;
        let off = (gram - DMatrix::<C64>::identity(self.len(), self.len())).camax();
        if off > 1e-8 {
            return Err(Error::Numerical(format!("ensemble projectors not orthogonal: {off:.3e}")));
        }
        Ok((0..self.len()).map(|k| Projector::onto(&v.column(k).clone_owned())).collect())
    }
}

fn variance_f(chi: &DVector<C64>, dv: &[f64]) -> f64 {
    let (mut m1, mut m2, mut nn) = (0.0, 0.0, 0.0);
    for (c, d) in chi.iter().zip(dv) {
        let p = c.norm_sqr();
        nn += p;
        m1 += p * d;
        m2 += p * d * d;
    }
    let (m1, m2) = (m1 / nn, m2 / nn);
    (m2 - m1 * m1).max(0.0).sqrt()
}

/// Default step for vector propagation: the guideline at unit energy scale, at most 10⁻³.
pub fn default_ds(tau: f64) -> f64 {
    step_guideline(tau, 1.0).min(1e-3)
}

/// Uniform observation grid `k/m`, `k = 0..=m`.
pub fn s_grid(m: usize) -> Vec<f64> {
    (0..=m).map(|k| k as f64 / m as f64).collect()
}

/// `f(P_1^n(0), H̃(s))` for each ensemble level on `s_samples`, from `U_1(s,0)φ_n(0)`.
///
/// Returns one row per sample, one column per level.
pub fn f_profile(
    well: &WellFamily,
    grid: &Grid1D,
    ensemble: &MetastableEnsemble,
    s_samples: &[f64],
    tau: f64,
) -> Result<Vec<Vec<f64>>> {
    let h1_0 = well.h1(grid, 0.0)?;
    let phi = ensemble.vectors(&h1_0)?;
    let u1 = propagate(&well.h1_family(grid), tau, default_ds(tau), s_samples, &Initial::Vectors(phi))?;
    u1.snapshots
        .iter()
        .map(|sn| {
            let dv = split_potential(well, grid, sn.s)?.dv;
            Ok((0..sn.state.ncols()).map(|k| variance_f(&sn.state.column(k).clone_owned(), &dv)).collect())
        })
        .collect()
}

/// `(f_max, τ_l = 1/(2 f_max))`; `τ_l = +∞` when `δv` vanishes on the states.
pub fn escape_time_metric(
    well: &WellFamily,
    grid: &Grid1D,
    ensemble: &MetastableEnsemble,
    s_samples: &[f64],
    tau: f64,
) -> Result<(f64, f64)> {
    let prof = f_profile(well, grid, ensemble, s_samples, tau)?;
    let f_max = prof.iter().flatten().fold(0.0f64, |m, &v| m.max(v));
    let tau_l = if f_max > 0.0 { 1.0 / (2.0 * f_max) } else { f64::INFINITY };
    Ok((f_max, tau_l))
}

/// Slopes of `log|ψ|` against `x²` in the tails of the `k` lowest eigenstates.
///
/// The fit region is the part of the grid beyond the outermost point with
/// `|ψ| ≥ 10⁻²`, restricted to `|ψ| > 10⁻¹⁰` (unit-normalized in `L²`).
pub fn gaussian_decay_check(h1: &ComplexOperator, grid: &Grid1D, k: usize) -> Result<Vec<f64>> {
    let pairs = hermitian_eigs(h1, k, grid.h())?;
    let xs = grid.points();
    pairs
        .iter()
        .enumerate()
        .map(|(l, p)| {
            let a: Vec<f64> = p.vector.amps.iter().map(|z| z.norm()).collect();
            let core = xs.iter().zip(&a).filter(|(_, &v)| v >= 1e-2).map(|(x, _)| x.abs()).fold(0.0f64, f64::max);
            let (fx, fy): (Vec<f64>, Vec<f64>) = xs
                .iter()
                .zip(&a)
                .filter(|(x, &v)| x.abs() > core && v > 1e-10 && v < 1e-2)
                .map(|(x, v)| (x * x, v.ln()))
                .unzip();
            if fx.len() < 3 {
                return Err(Error::EmptyFitRegion(format!("level {l}: {} tail points; enlarge the box", fx.len())));
            }
            Ok(fit_linear(&fx, &fy, &InlierRule::All)?.slope)
        })
        .collect()
}

/// Options of [`run_shape_experiment`].
#[derive(Clone, Debug)]
pub struct ShapeOptions {
    /// Observation points per unit s.
    pub n_obs: usize,
    /// Replace `H` by `H_1` (δv zeroed).
    pub zero_delta_v: bool,
    /// Step override `ds = ds_scale/τ`; [`default_ds`] otherwise.
    pub ds_scale: Option<f64>,
}

impl ShapeOptions {
    pub fn step(&self, tau: f64) -> f64 {
        self.ds_scale.map(|c| (c / tau).min(1.0)).unwrap_or_else(|| default_ds(tau))
    }
}

impl Default for ShapeOptions {
    fn default() -> Self {
        ShapeOptions { n_obs: 64, zero_delta_v: false, ds_scale: None }
    }
}

/// One τ of the shape sweep.
#[derive(Clone, Debug)]
pub struct ShapeTauResult {
    pub tau: f64,
    /// `sup_s |p_s − Tr(P ρ̃_s)|`.
    pub err: f64,
    /// Largest distance of any `p_s^n` outside its uncertainty envelope (0 when contained).
    pub envelope_excess: f64,
    pub s: Vec<f64>,
    pub p: Vec<f64>,
    pub p_inst: Vec<f64>,
    /// Per level and s: `(p_s^n, lower, upper)`.
    pub envelope: Vec<Vec<(f64, f64, f64)>>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct ShapeReport {
    pub runs: Vec<ShapeTauResult>,
    pub f_max: f64,
    pub tau_l: f64,
    /// `(A, B)` of `err ≈ A/τ + Bτ/τ_l`, with relative residual.
    pub mixture: Option<(f64, f64, f64)>,
    pub slope: Option<ScalingFit>,
}

/// Instantaneous metastable probabilities `Tr(P P_1^n(s))` from eigenvectors of `H_1(s)`.
fn instantaneous(well: &WellFamily, grid: &Grid1D, n: usize, p_ref: &DMatrix<C64>, s: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut prev: Option<DMatrix<C64>> = None;
    s.iter()
        .map(|&si| {
            let dec = HermitianDecomposition::new(&well.h1(grid, si)?)?;
            let v = dec.vectors.columns(0, n).clone_owned();
            if let Some(pv) = &prev {
                for k in 0..n {
                    let o = pv.column(k).dotc(&v.column(k)).norm();
                    if o <= crate::spectral::branch::BRANCH_OVERLAP_MIN {
                        return Err(Error::BranchLost { overlap: o, s: si });
                    }
                }
            }
            let pv = p_ref.adjoint() * &v;
            prev = Some(v);
            Ok((0..n).map(|k| pv.column(k).norm_squared()).collect())
        })
        .collect()
}

fn trapezoid_cumulative(s: &[f64], f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; s.len()];
    for k in 1..s.len() {
        out[k] = out[k - 1] + 0.5 * (f[k] + f[k - 1]) * (s[k] - s[k - 1]);
    }
    out
}

fn run_one_tau(
    well: &WellFamily,
    grid: &Grid1D,
    ensemble: &MetastableEnsemble,
    phi0: &DMatrix<C64>,
    inst: &[Vec<f64>],
    s: &[f64],
    tau: f64,
    opts: &ShapeOptions,
) -> Result<ShapeTauResult> {
    let ds = opts.step(tau);
    let init = Initial::Vectors(phi0.clone());
    let u1 = propagate(&well.h1_family(grid), tau, ds, s, &init)?;
    let u = if opts.zero_delta_v { u1.clone() } else { propagate(&well.family(grid), tau, ds, s, &init)? };
    let n = ensemble.len();
    let dvs: Vec<Vec<f64>> = s.iter().map(|&si| split_potential(well, grid, si).map(|sp| sp.dv)).collect::<Result<_>>()?;
    let mut envelope = vec![Vec::with_capacity(s.len()); n];
    let mut excess = 0.0f64;
    for k in 0..n {
        let f: Vec<f64> = if opts.zero_delta_v {
            vec![0.0; s.len()]
        } else {
            u1.snapshots.iter().zip(&dvs).map(|(sn, dv)| variance_f(&sn.state.column(k).clone_owned(), dv)).collect()
        };
        let integral = trapezoid_cumulative(s, &f);
        for (j, (snu, snu1)) in u.snapshots.iter().zip(&u1.snapshots).enumerate() {
            let p_n = phi0.adjoint() * snu.state.column(k);
            let p_n = p_n.norm_squared();
            let p_tilde = (phi0.adjoint() * snu1.state.column(k)).norm_squared().min(1.0);
            let (lo, hi) = uncertainty_bounds(p_tilde, 2.0 * tau * integral[j])?;
            excess = excess.max(lo - p_n).max(p_n - hi);
            envelope[k].push((p_n, lo, hi));
        }
    }
    let mut p = Vec::with_capacity(s.len());
    let mut p_inst = Vec::with_capacity(s.len());
    let mut err = 0.0f64;
    for j in 0..s.len() {
        let pj: f64 = (0..n).map(|k| ensemble.weights[k] * envelope[k][j].0).sum();
        let qj: f64 = (0..n).map(|k| ensemble.weights[k] * inst[j][k]).sum();
        err = err.max((pj - qj).abs());
        p.push(pj);
        p_inst.push(qj);
    }
    let mut warnings = u.warnings.clone();
    warnings.extend(u1.warnings.iter().cloned());
    Ok(ShapeTauResult { tau, err, envelope_excess: excess.max(0.0), s: s.to_vec(), p, p_inst, envelope, warnings })
}

/// τ-sweep of `sup_s |p_s − Tr(P ρ̃_s)|` with the uncertainty envelope at every s.
///
/// The reference projection is onto the ensemble's levels of `H_1(0)`.
pub fn run_shape_experiment(
    well: &WellFamily,
    grid: &Grid1D,
    ensemble: &MetastableEnsemble,
    taus: &[f64],
    opts: &ShapeOptions,
) -> Result<ShapeReport> {
    well.check_assumptions()?;
    for si in s_grid(8) {
        split_potential(well, grid, si)?;
    }
    if taus.is_empty() {
        return invalid("tau sweep is empty");
    }
    let s = s_grid(opts.n_obs);
    let phi0 = ensemble.vectors(&well.h1(grid, 0.0)?)?;
    let inst = instantaneous(well, grid, ensemble.len(), &phi0, &s)?;
    let (f_max, tau_l) = if opts.zero_delta_v {
        (0.0, f64::INFINITY)
    } else {
        escape_time_metric(well, grid, ensemble, &s_grid(16), taus[0])?
    };
    let mut runs = taus
        .par_iter()
        .map(|&tau| {
            run_one_tau(well, grid, ensemble, &phi0, &inst, &s, tau, opts).map(|mut r| {
                if tau < 4.0 || tau > tau_l {
                    r.warnings.push(format!("tau = {tau} outside 1 << tau << tau_l = {tau_l:.3e}"));
                }
                r
            })
        })
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by(|a, b| a.tau.total_cmp(&b.tau));
    let ts: Vec<f64> = runs.iter().map(|r| r.tau).collect();
    let es: Vec<f64> = runs.iter().map(|r| r.err).collect();
    let slope = fit_loglog(&ts, &es, &InlierRule::All).ok();
    let mixture = if tau_l.is_finite() && ts.len() >= 2 {
        let tl = tau_l;
        fit_basis(&ts, &es, &[&|t| 1.0 / t, &move |t| t / tl]).ok().map(|(c, r)| (c[0], c[1], r))
    } else {
        None
    };
    Ok(ShapeReport { runs, f_max, tau_l, mixture, slope })
}

impl ShapeReport {
    pub fn to_report(&self, experiment: &str, well: &WellFamily) -> ExperimentReport {
        let mut rep = ExperimentReport::default();
        let base = |m: &str, v: f64| ReportRow::new(experiment, m, v).theta(well.theta).epsilon(well.epsilon);
        rep.rows.push(base("f_max", self.f_max));
        rep.rows.push(base("tau_l", self.tau_l));
        for r in &self.runs {
            rep.rows.push(base("err", r.err).tau(r.tau));
            rep.rows.push(base("envelope_excess", r.envelope_excess).tau(r.tau));
            for (j, &s) in r.s.iter().enumerate() {
                rep.rows.push(base("p_s", r.p[j]).tau(r.tau).s(s));
                rep.rows.push(base("p_inst", r.p_inst[j]).tau(r.tau).s(s));
                for (k, env) in r.envelope.iter().enumerate() {
                    let (p, lo, hi) = env[j];
                    rep.rows.push(base(&format!("p_s_level{k}"), p).tau(r.tau).s(s).bounds(lo, hi));
                }
            }
            rep.warnings.extend(r.warnings.iter().map(|w| format!("tau {}: {w}", r.tau)));
        }
        if let Some((a, b, res)) = self.mixture {
            rep.rows.push(base("mixture_a", a));
            rep.rows.push(base("mixture_b", b));
            rep.rows.push(base("mixture_residual", res));
        }
        if let Some(f) = &self.slope {
            rep.fits.insert(format!("{experiment}_err_vs_tau"), f.clone());
        }
        rep.plot(
            &format!("{experiment}_err_vs_tau"),
            "tau",
            "err",
            self.runs.iter().map(|r| (r.tau, r.err)).collect(),
        );
        rep
    }
}

/// `sup_s ‖U_a(s,0) − U_1(s,0)‖` per τ for the `level` branch of `H_1(s)`.
#[derive(Clone, Debug)]
pub struct AdiabaticSlope {
    pub taus: Vec<f64>,
    pub errs: Vec<f64>,
    pub fit: ScalingFit,
    pub warnings: Vec<String>,
}

/// Ground-state (or `level`) branch of `H_1(s)` as an interpolated table.
pub fn h1_branch(well: &WellFamily, grid: &Grid1D, level: usize, n_nodes: usize) -> Result<BranchTable> {
    BranchTable::build(n_nodes, |s, _| Ok(hermitian_eigs(&well.h1(grid, s)?, level + 1, 1.0)?.remove(level)))
}

/// Full-propagator comparison of the adiabatic and the auxiliary evolution.
pub fn adiabatic_slope_check(
    well: &WellFamily,
    grid: &Grid1D,
    level: usize,
    taus: &[f64],
    n_obs: usize,
    ds_scale: f64,
) -> Result<AdiabaticSlope> {
    let ds = |tau: f64| (ds_scale / tau).min(1e-3);
    let table = Arc::new(h1_branch(well, grid, level, 41)?);
    let branch: Branch = Arc::new(move |s| table.projector(s));
    let fam = well.h1_family(grid);
    let obs = s_grid(n_obs);
    let mut out = taus
        .par_iter()
        .map(|&tau| -> Result<(f64, f64, Vec<String>)> {
            let ua_fam = adiabatic_generator(&fam, branch.clone(), tau, 1.0, 1e-3);
            let ua = propagate(&ua_fam, tau, ds(tau), &obs, &Initial::Identity)?;
            let u1 = propagate(&fam, tau, ds(tau), &obs, &Initial::Identity)?;
            Ok((tau, sup_distance(&ua, &u1), ua.warnings))
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    let taus: Vec<f64> = out.iter().map(|x| x.0).collect();
    let errs: Vec<f64> = out.iter().map(|x| x.1).collect();
    let warnings = out.into_iter().flat_map(|x| x.2).collect();
    let fit = fit_loglog(&taus, &errs, &InlierRule::All)?;
    Ok(AdiabaticSlope { taus, errs, fit, warnings })
}

/// `sup_s ‖A(s) − B(s)‖` over matching snapshots.
pub fn sup_distance(a: &PropagationResult, b: &PropagationResult) -> f64 {
    a.snapshots.iter().zip(&b.snapshots).map(|(x, y)| dense_norm(&(&x.state - &y.state))).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid1D {
        Grid1D::symmetric(256, 12.0).unwrap()
    }

    #[test]
    fn cutoff_values() {
        let (e, t) = (0.5, 4.0);
        let r = (e * t as f64).cbrt();
        assert_eq!(cutoff_g(0.0, e, t), 1.0);
        assert_eq!(cutoff_g(2.0 * r, e, t), 0.0);
        let v = cutoff_g(0.75 * r, e, t);
        assert!(v > 0.0 && v < 1.0);
        assert_eq!(v, cutoff_g(-0.75 * r, e, t));
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn harmonic_profile_has_no_remainder() {
        let w = WellFamily::new(4.0, 0.5, Profile::Harmonic).unwrap();
        let sp = split_potential(&w, &grid(), 0.3).unwrap();
        assert!(sp.w.iter().chain(&sp.dv).all(|&v| v == 0.0));
    }

    #[test]
    fn splitting_identity_and_support() {
        let w = WellFamily::new(4.0, 0.5, Profile::GaussianDamped).unwrap();
        let g = grid();
        for &s in &[0.0, 0.4, 1.0] {
            let sp = split_potential(&w, &g, s).unwrap();
            let sum = sp.h1.add(&sp.delta_v).to_dense();
            let full = w.hamiltonian(&g, s).unwrap().to_dense();
            assert!((sum - full).camax() < 1e-12);
            let half = 0.5 * w.cutoff_radius();
            for (x, d) in g.points().iter().zip(&sp.dv) {
                if x.abs() <= half {
                    assert_eq!(*d, 0.0);
                }
            }
            assert!(sp.a3_constant > 0.0 && sp.a3_constant < 1.0);
        }
    }

    #[test]
    fn violated_bound_is_rejected() {
        let mut w = WellFamily::new(4.0, 0.5, Profile::GaussianDamped).unwrap();
        w.c_max = 1e-3;
        assert!(matches!(split_potential(&w, &grid(), 0.0), Err(Error::Assumption(_))));
    }

    #[test]
    fn f_metric_cases() {
        let e1 = DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        let p = Projector::onto(&e1);
        let flip = ComplexOperator::from_dense(DMatrix::from_row_slice(
            2,
            2,
            &[C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        ));
        assert!((f_metric(&p, &flip) - 1.0).abs() < 1e-14);
        assert_eq!(f_metric(&p, &ComplexOperator::from_real_diagonal(&[2.0, 3.0])), 0.0);
    }

    #[test]
    fn f_metric_matches_basis_sum() {
        let n = 6;
        let a = DMatrix::from_fn(n, n, |i, j| C64::new(((i * 3 + j * 5) % 7) as f64 - 3.0, ((i + 2 * j) % 5) as f64 - 2.0));
        let a = &a + a.adjoint();
        let q = DMatrix::from_fn(n, 2, |i, j| C64::new((i + j) as f64, (i * j) as f64 * 0.3)).qr().q();
        let p = Projector::orthogonal(&q);
        let pd = p.operator.to_dense();
        let qc = DMatrix::<C64>::identity(n, n) - &pd;
        // Σ_{i,j} <e_i|P|e_j><e_j|A†(1−P)A|e_i>.
        let m = a.adjoint() * qc * &a;
        let mut t = C64::new(0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                t += pd[(i, j)] * m[(j, i)];
            }
        }
        let op = ComplexOperator::from_dense(a);
        assert!((f_metric(&p, &op) - t.re.sqrt()).abs() < 1e-10);
        let dense = Projector { operator: ComplexOperator::from_dense(pd), rank: 2 };
        assert!((f_metric(&dense, &op) - t.re.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn uncertainty_cases() {
        let (lo, hi) = uncertainty_bounds(0.3, 0.0).unwrap();
        assert!((lo - 0.3).abs() < 1e-15 && (hi - 0.3).abs() < 1e-15);
        assert_eq!(uncertainty_bounds(1.0, 0.2).unwrap().1, 1.0);
        let (lo, hi) = uncertainty_bounds(0.5, std::f64::consts::PI / 12.0).unwrap();
        assert!((hi - 0.75).abs() < 1e-12 && (lo - 0.25).abs() < 1e-12);
        assert!(uncertainty_bounds(1.5, 0.0).is_err());
    }

    #[test]
    fn harmonic_decay_slopes() {
        let g = grid();
        for &(om, expect) in &[(1.0, -0.5), (2.0, -1.0)] {
            let h = build_hamiltonian(&g, |x| 0.5 * om * om * x * x).unwrap();
            let sl = gaussian_decay_check(&h, &g, 1).unwrap();
            assert!((sl[0] / expect - 1.0).abs() < 0.1, "omega {om}: {}", sl[0]);
        }
    }

    #[test]
    fn decay_fit_needs_tails() {
        let g = Grid1D::symmetric(64, 2.0).unwrap();
        let h = build_hamiltonian(&g, |x| 0.5 * x * x).unwrap();
        assert!(matches!(gaussian_decay_check(&h, &g, 1), Err(Error::EmptyFitRegion(_))));
    }

    #[test]
    fn perturbed_decay_near_harmonic() {
        let w = WellFamily::new(5.0, 0.5, Profile::GaussianDamped).unwrap();
        let g = grid();
        let sl = gaussian_decay_check(&w.h1(&g, 0.0).unwrap(), &g, 3).unwrap();
        for s in sl {
            assert!((s / -0.5 - 1.0).abs() < 0.25, "{s}");
        }
    }

    #[test]
    fn zero_delta_v_gives_infinite_lifetime() {
        let w = WellFamily::new(4.0, 0.5, Profile::Harmonic).unwrap();
        let (f, tl) = escape_time_metric(&w, &grid(), &MetastableEnsemble::default(), &s_grid(4), 8.0).unwrap();
        assert_eq!(f, 0.0);
        assert!(tl.is_infinite());
    }

    #[test]
    fn f_is_unitarily_invariant() {
        // Same value from the low-rank metric on P_1^n(0) with H̃ and on U_1 φ with δv.
        let w = WellFamily::new(4.0, 0.5, Profile::GaussianDamped).unwrap();
        let g = Grid1D::symmetric(96, 10.0).unwrap();
        let ens = MetastableEnsemble::new(vec![1.0]).unwrap();
        let tau = 4.0;
        let fam = w.h1_family(&g);
        let u1 = propagate(&fam, tau, 1e-3, &[0.5], &Initial::Identity).unwrap();
        let dv = split_potential(&w, &g, 0.5).unwrap().delta_v;
        let ht = ComplexOperator::from_dense(crate::propagate::tilde_h(&u1.snapshots[0].state, &dv));
        let p0 = &ens.projectors(&w.h1(&g, 0.0).unwrap()).unwrap()[0];
        let direct = f_metric(p0, &ht);
        let via = f_profile(&w, &g, &ens, &[0.5], tau).unwrap()[0][0];
        assert!((direct - via).abs() < 1e-8, "{direct} vs {via}");
    }

    #[test]
    fn ensemble_validation() {
        assert!(MetastableEnsemble::new(vec![0.5, 0.4]).is_err());
        assert!(MetastableEnsemble::new(vec![1.2, -0.2]).is_err());
        let e = MetastableEnsemble::default();
        let w = WellFamily::new(5.0, 0.5, Profile::GaussianDamped).unwrap();
        assert_eq!(e.projectors(&w.h1(&grid(), 0.0).unwrap()).unwrap().len(), 2);
    }
}
