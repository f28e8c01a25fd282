//! Friedrichs model: discrete levels embedded in a Gauss–Legendre continuum on `[0, 2]`.
//!
//! ```text
//! H_g(s) = W(s) [ λ_0(s) ⊕ diag(ω_k) + g(|0⟩b(s)^T + b(s)⟨0|) ] W(s)^T,   b_k = √w_k v(ω_k, s)
//! v(ω, s) = (1 + 0.3s)·√(ω(2 − ω))
//! ```
//!
//! `W(s)` rotates `|0⟩` towards the normalized continuum vector `χ ∝ √w_k √(ω_k(2 − ω_k))`
//! by the angle `αs`, so the embedded eigenvector `φ(s) = W(s)|0⟩` moves with `s`.
//! An optional second level `λ_1(s)` crosses `λ_0(s)` at `s = ½`.

use crate::error::{invalid, Error, Result};
use crate::harness::fit::{fit_linear, fit_loglog, InlierRule, ScalingFit};
use crate::harness::report::{ExperimentReport, ReportRow};
use crate::lattice::{Band, ComplexOperator, LowRank};
use crate::propagate::{adiabatic_generator, propagate, Branch, DrivenFamily, Initial};
use crate::quadrature::gauss_legendre;
use crate::spectral::Projector;
use crate::C64;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::sync::Arc;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Second level for crossing runs: `λ_{0,1}(s) = level ± slope·(s − ½)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Crossing {
    pub slope: f64,
    /// Continuum coupling of level 1 relative to level 0.
    pub coupling_ratio: f64,
}

impl Default for Crossing {
    fn default() -> Self {
        Crossing { slope: 0.4, coupling_ratio: 0.8 }
    }
}

#[derive(Clone, Debug)]
pub struct FriedrichsModel {
    pub omega: Vec<f64>,
    pub weights: Vec<f64>,
    pub level: f64,
    pub level_slope: f64,
    /// `v(ω, s) = (1 + form_slope·s)·√(ω(2 − ω))`.
    pub form_slope: f64,
    /// Rotation rate `α` of `φ(s)`.
    pub rotation: f64,
    pub g: f64,
    pub crossing: Option<Crossing>,
}

impl FriedrichsModel {
    pub fn new(nodes: usize, g: f64) -> Result<Self> {
        if nodes < 4 {
            return invalid("continuum needs at least 4 nodes");
        }
        let (omega, weights) = gauss_legendre(nodes, 0.0, 2.0);
        Ok(FriedrichsModel { omega, weights, level: 1.0, level_slope: 0.0, form_slope: 0.3, rotation: 0.01, g, crossing: None })
    }

    pub fn with_g(&self, g: f64) -> Self {
        FriedrichsModel { g, ..self.clone() }
    }

    pub fn with_crossing(mut self, crossing: Crossing) -> Self {
        self.crossing = Some(crossing);
        self
    }

    pub fn n_levels(&self) -> usize {
        if self.crossing.is_some() {
            2
        } else {
            1
        }
    }

    pub fn dim(&self) -> usize {
        self.n_levels() + self.omega.len()
    }

    pub fn lambda0(&self, s: f64) -> f64 {
        match &self.crossing {
            Some(x) => self.level + x.slope * (s - 0.5),
            None => self.level + self.level_slope * s,
        }
    }

    pub fn lambda1(&self, s: f64) -> Option<f64> {
        self.crossing.as_ref().map(|x| self.level - x.slope * (s - 0.5))
    }

    /// Checks that the levels stay inside the continuum for all `s`.
    pub fn check(&self) -> Result<()> {
        let (lo, hi) = (self.omega[0], self.omega[self.omega.len() - 1]);
        for k in 0..=16 {
            let s = k as f64 / 16.0;
            for l in std::iter::once(self.lambda0(s)).chain(self.lambda1(s)) {
                if !(l > lo && l < hi) {
                    return Err(Error::Assumption(format!("level {l} at s = {s} not embedded in ({lo}, {hi})")));
                }
            }
        }
        Ok(())
    }

    pub fn form(&self, omega: f64, s: f64) -> f64 {
        (1.0 + self.form_slope * s) * (omega * (2.0 - omega)).max(0.0).sqrt()
    }

    /// `b_k(s) = √w_k v(ω_k, s)`.
    pub fn coupling_row(&self, s: f64) -> Vec<f64> {
        self.omega.iter().zip(&self.weights).map(|(&o, &w)| w.sqrt() * self.form(o, s)).collect()
    }

    fn embed(&self, row: &[f64]) -> DVector<C64> {
        let nl = self.n_levels();
        DVector::from_fn(self.dim(), |i, _| if i < nl { c(0.0) } else { c(row[i - nl]) })
    }

    fn unit(&self, i: usize) -> DVector<C64> {
        DVector::from_fn(self.dim(), |j, _| c(if i == j { 1.0 } else { 0.0 }))
    }

    /// Normalized continuum direction `χ` of the rotation.
    pub fn chi(&self) -> DVector<C64> {
        let raw: Vec<f64> = self.omega.iter().zip(&self.weights).map(|(&o, &w)| (w * o * (2.0 - o)).sqrt()).collect();
        let v = self.embed(&raw);
        let n = v.norm();
        v / c(n)
    }

    /// `φ(s) = cos(αs)|0⟩ + sin(αs)χ`.
    pub fn phi(&self, s: f64) -> DVector<C64> {
        let (sn, cs) = (self.rotation * s).sin_cos();
        self.unit(0) * c(cs) + self.chi() * c(sn)
    }

    /// Hamiltonian before the rotation; `coupling` scales all level–continuum rows.
    pub fn unrotated(&self, s: f64, coupling: f64) -> ComplexOperator {
        let nl = self.n_levels();
        let mut diag: Vec<C64> = Vec::with_capacity(self.dim());
        diag.push(c(self.lambda0(s)));
        if let Some(l1) = self.lambda1(s) {
            diag.push(c(l1));
        }
        diag.extend(self.omega.iter().map(|&o| c(o)));
        let mut op = ComplexOperator::from_band(Band::from_diagonal(&diag));
        if coupling != 0.0 {
            let b = self.embed(&self.coupling_row(s));
            let mut us = vec![self.unit(0) * c(coupling), b.clone() * c(coupling)];
            let mut vs = vec![b.clone(), self.unit(0)];
            if let Some(x) = &self.crossing {
                us.push(self.unit(1) * c(coupling * x.coupling_ratio));
                us.push(b.clone() * c(coupling * x.coupling_ratio));
                vs.push(b);
                vs.push(self.unit(1));
            }
            debug_assert_eq!(nl, us.len() / 2);
            op = op.add(&ComplexOperator::from_low_rank(LowRank::new(DMatrix::from_columns(&us), DMatrix::from_columns(&vs))));
        }
        op.with_hermitian(true)
    }

    /// `W H W^T` for `W = 1 + Q M Q^T`, `Q = [|0⟩, χ]`, kept as band plus low rank.
    fn rotate(&self, h: ComplexOperator, s: f64) -> ComplexOperator {
        let (sn, cs) = (self.rotation * s).sin_cos();
        if sn == 0.0 {
            return h;
        }
        let q = DMatrix::from_columns(&[self.unit(0), self.chi()]);
        let m = DMatrix::from_row_slice(2, 2, &[c(cs - 1.0), c(-sn), c(sn), c(cs - 1.0)]);
        let hq = h.apply_mat(&q);
        let cq = q.adjoint() * &hq;
        let qm = &q * &m;
        let u2 = &hq * m.transpose() + &qm * cq * m.transpose();
        let u = DMatrix::from_columns(&[qm.column(0), qm.column(1), u2.column(0), u2.column(1)]);
        let v = DMatrix::from_columns(&[hq.column(0), hq.column(1), q.column(0), q.column(1)]);
        h.add(&ComplexOperator::from_low_rank(LowRank::new(u, v))).with_hermitian(true)
    }

    pub fn hamiltonian(&self, s: f64) -> ComplexOperator {
        self.rotate(self.unrotated(s, self.g), s)
    }

    /// `H_0(s)`: the same operator at `g = 0`; `φ(s)` is its eigenvector for `λ_0(s)`.
    pub fn h0(&self, s: f64) -> ComplexOperator {
        self.rotate(self.unrotated(s, 0.0), s)
    }

    pub fn family(&self) -> DrivenFamily {
        let me = self.clone();
        DrivenFamily::new(self.dim(), true, move |s| Ok(me.hamiltonian(s))).with_energy_scale(2.0)
    }

    /// `P_0(s) = |φ(s)⟩⟨φ(s)|`, followed by continuity of `λ_0` through crossings.
    pub fn branch(&self) -> Branch {
        let me = self.clone();
        Arc::new(move |s| Ok(Projector::onto(&me.phi(s))))
    }

    /// Node spacing of the continuum nearest `lambda`.
    pub fn local_spacing(&self, lambda: f64) -> f64 {
        let k = self.omega.partition_point(|&o| o < lambda).clamp(1, self.omega.len() - 1);
        self.omega[k] - self.omega[k - 1]
    }
}

/// `F(z, s) = Σ_k b_k(s)² / (z − ω_k)`.
pub fn level_shift(model: &FriedrichsModel, s: f64, z: C64) -> Result<C64> {
    if z.im == 0.0 {
        return invalid("level shift needs Im z != 0");
    }
    Ok(model.coupling_row(s).iter().zip(&model.omega).map(|(b, &o)| b * b / (z - o)).sum())
}

/// `F(λ + i0, s)` by Richardson extrapolation from `η` and `2η`; requires `η ≥ 3·spacing`.
pub fn boundary_value(model: &FriedrichsModel, s: f64, lambda: f64, eta: f64) -> Result<C64> {
    let h = model.local_spacing(lambda);
    if eta < 3.0 * h {
        return invalid(format!("eta = {eta:.3e} below 3x continuum spacing {h:.3e}"));
    }
    let f1 = level_shift(model, s, C64::new(lambda, eta))?;
    let f2 = level_shift(model, s, C64::new(lambda, 2.0 * eta))?;
    Ok(f1 * 2.0 - f2)
}

/// Continuum-limit `Im F(λ + i0, s) = −π v(λ, s)²`.
pub fn analytic_im_boundary(model: &FriedrichsModel, s: f64, lambda: f64) -> f64 {
    -std::f64::consts::PI * model.form(lambda, s).powi(2)
}

/// Default boundary-value offset: three local node spacings, at least `10⁻³`.
pub fn default_eta(model: &FriedrichsModel, lambda: f64) -> f64 {
    (3.0 * model.local_spacing(lambda)).max(1e-3)
}

/// `λ_0(s) + g² F(λ_0(s) + i0, s)`; `⟨φ, Vφ⟩ = 0` for this coupling.
pub fn lambda_g_second_order(model: &FriedrichsModel, s: f64) -> Result<C64> {
    let l0 = model.lambda0(s);
    if model.g == 0.0 {
        return Ok(c(l0));
    }
    let f = boundary_value(model, s, l0, default_eta(model, l0))?;
    Ok(c(l0) + f * (model.g * model.g))
}

/// Eigenvalues of the single-level arrow matrix and their weights on `|0⟩`.
///
/// Roots of `z − λ_0 − g² Σ b_k²/(z − ω_k)`, one per interlacing interval.
pub fn arrow_spectrum(model: &FriedrichsModel, s: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if model.crossing.is_some() {
        return invalid("arrow spectrum needs a single discrete level");
    }
    let g2 = model.g * model.g;
    let l0 = model.lambda0(s);
    if g2 == 0.0 {
        return Ok((vec![l0], vec![1.0]));
    }
    let b2: Vec<f64> = model.coupling_row(s).iter().map(|b| b * b).collect();
    let om = &model.omega;
    let k = om.len();
    let total: f64 = b2.iter().sum();
    let f = |z: f64| z - l0 - g2 * b2.iter().zip(om).map(|(b, o)| b / (z - o)).sum::<f64>();
    let reach = (l0 - om[0]).abs() + (om[k - 1] - l0).abs() + g2 * total + 1.0;
    let mut brackets = Vec::with_capacity(k + 1);
    brackets.push((om[0] - reach, om[0]));
    for j in 0..k - 1 {
        brackets.push((om[j], om[j + 1]));
    }
    brackets.push((om[k - 1], om[k - 1] + reach));
    let roots: Vec<f64> = brackets
        .par_iter()
        .map(|&(a, b)| {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if f(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect();
    let weights = roots
        .iter()
        .map(|&z| 1.0 / (1.0 + g2 * b2.iter().zip(om).map(|(b, o)| b / (z - o).powi(2)).sum::<f64>()))
        .collect();
    Ok((roots, weights))
}

/// `⟨φ(s), e^{−iH_g(s)t} ξ(H_g(s)) φ(s)⟩` (the rotation drops out).
pub fn survival_amplitude(model: &FriedrichsModel, s: f64, xi: &dyn Fn(f64) -> f64, t_grid: &[f64]) -> Result<Vec<(f64, C64)>> {
    let (vals, w) = arrow_spectrum(model, s)?;
    let terms: Vec<(f64, f64)> = vals.iter().zip(&w).map(|(&e, &wt)| (e, wt * xi(e))).filter(|x| x.1 != 0.0).collect();
    Ok(t_grid.iter().map(|&t| (t, terms.iter().map(|&(e, a)| C64::new(0.0, -e * t).exp() * a).sum())).collect())
}

/// One coupling of the golden-rule check.
#[derive(Clone, Debug)]
pub struct FgrSample {
    pub g: f64,
    /// Fitted `d log|amplitude| / dt`.
    pub fitted_rate: f64,
    /// `g² Im F(λ_0 + i0)`.
    pub predicted_rate: f64,
    /// `|a_g| − 1` from the fit intercept.
    pub a_minus_one: f64,
    pub window: (f64, f64),
}

#[derive(Clone, Debug)]
pub struct FgrReport {
    pub samples: Vec<FgrSample>,
    /// `−2 Im λ_g` fitted against g.
    pub rate_fit: ScalingFit,
    pub a_fit: Option<ScalingFit>,
    /// `(s, η, Im F(λ_0(s) + iη, s))` sign samples.
    pub sign_samples: Vec<(f64, f64, f64)>,
    /// Relative error of the boundary value against `−π v(λ_0)²` at the statics resolution.
    pub boundary_error: f64,
}

/// Survival-fit decay rate against `g`, at `s`, on a continuum of `statics.omega.len()` nodes.
pub fn fgr_check(statics: &FriedrichsModel, s: f64, gs: &[f64], boundary_eta: f64, xi_window: (f64, f64, f64)) -> Result<FgrReport> {
    let l0 = statics.lambda0(s);
    let xi = crate::dilation::smooth_window(xi_window.0, xi_window.1, xi_window.2);
    // Heisenberg time of the discretized continuum near λ_0.
    let t_h = 2.0 * std::f64::consts::PI / statics.local_spacing(l0);
    let pred_im = boundary_value(statics, s, l0, default_eta(statics, l0))?.im;
    let samples = gs
        .iter()
        .map(|&g| {
            let m = statics.with_g(g);
            let rate0 = (g * g * pred_im).abs();
            let (t1, t2) = (0.5 / rate0, (3.0 / rate0).min(0.25 * t_h));
            if t2 <= t1 {
                return Err(Error::EmptyFitRegion(format!("g = {g}: decay slower than the continuum resolves")));
            }
            let ts: Vec<f64> = (0..=200).map(|k| t1 + (t2 - t1) * k as f64 / 200.0).collect();
            let amp = survival_amplitude(&m, s, &xi, &ts)?;
            let ys: Vec<f64> = amp.iter().map(|(_, a)| a.norm().ln()).collect();
            let fit = fit_linear(&ts, &ys, &InlierRule::All)?;
            Ok(FgrSample { g, fitted_rate: fit.slope, predicted_rate: g * g * pred_im, a_minus_one: (fit.intercept.exp() - 1.0).abs(), window: (t1, t2) })
        })
        .collect::<Result<Vec<_>>>()?;
    let rates: Vec<f64> = samples.iter().map(|x| -2.0 * x.fitted_rate).collect();
    let rate_fit = fit_loglog(gs, &rates, &InlierRule::All)?;
    let a: Vec<f64> = samples.iter().map(|x| x.a_minus_one).collect();
    let a_fit = fit_loglog(gs, &a, &InlierRule::All).ok();
    let mut sign_samples = Vec::new();
    for s in [0.0, 0.25, 0.5, 0.75, 1.0] {
        for eta in [1e-3, 1e-2, 1e-1] {
            sign_samples.push((s, eta, level_shift(statics, s, C64::new(statics.lambda0(s), eta))?.im));
        }
    }
    let fb = level_shift(statics, s, C64::new(l0, boundary_eta))?.im;
    let boundary_error = (fb / analytic_im_boundary(statics, s, l0) - 1.0).abs();
    Ok(FgrReport { samples, rate_fit, a_fit, sign_samples, boundary_error })
}

/// One coupling of the gapless sweep.
#[derive(Clone, Debug)]
pub struct GaplessCell {
    pub g: f64,
    pub tau: f64,
    /// `sup_s min_χ ‖U_τ(s,0)φ(0) − e^{iχ}φ(s)‖`.
    pub err: f64,
    /// `sup_s ‖(U_τ − U_a^0)(s,0)φ(0)‖`.
    pub err_a: f64,
    /// `sup_s ‖(1 − P_0(s))U_a^0(s,0)φ(0)‖`.
    pub intertwining: f64,
    pub s: Vec<f64>,
    pub distance: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Propagation step for the gapless runs.
pub fn default_ds(tau: f64) -> f64 {
    (0.05 / tau).min(1e-3)
}

/// Propagates `φ(0)` under `H_g` and under the adiabatic generator of `P_0`.
pub fn gapless_cell(model: &FriedrichsModel, tau: f64, n_obs: usize) -> Result<GaplessCell> {
    model.check()?;
    let fam = model.family();
    let branch = model.branch();
    let ua_fam = adiabatic_generator(&fam, branch, tau, 1.0, 1e-4);
    let obs: Vec<f64> = (1..=n_obs).map(|k| k as f64 / n_obs as f64).collect();
    let phi0 = model.phi(0.0);
    let init = Initial::Vectors(DMatrix::from_column_slice(phi0.len(), 1, phi0.as_slice()));
    let ds = default_ds(tau);
    let u = propagate(&fam, tau, ds, &obs, &init)?;
    let ua = propagate(&ua_fam, tau, ds, &obs, &init)?;
    let (mut err, mut err_a, mut inter) = (0.0f64, 0.0f64, 0.0f64);
    let mut distance = Vec::with_capacity(obs.len());
    for (a, b) in u.snapshots.iter().zip(&ua.snapshots) {
        let phi = model.phi(a.s);
        let x = a.state.column(0);
        let y = b.state.column(0);
        let d = (2.0 - 2.0 * phi.dotc(&x).norm()).max(0.0).sqrt();
        distance.push(d);
        err = err.max(d);
        err_a = err_a.max((x - y).norm());
        inter = inter.max((1.0 - phi.dotc(&y).norm_sqr()).max(0.0).sqrt());
    }
    let mut warnings = u.warnings;
    warnings.extend(ua.warnings);
    Ok(GaplessCell { g: model.g, tau, err, err_a, intertwining: inter, s: obs, distance, warnings })
}

/// How τ follows g.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TauRule {
    /// `τ = g^p`.
    Power(f64),
    Fixed(f64),
}

impl TauRule {
    pub fn tau(&self, g: f64) -> f64 {
        match *self {
            TauRule::Power(p) => g.powf(p),
            TauRule::Fixed(t) => t,
        }
    }
}

impl Default for TauRule {
    fn default() -> Self {
        TauRule::Power(-2.0 / 3.0)
    }
}

#[derive(Clone, Debug)]
pub struct GaplessReport {
    pub cells: Vec<GaplessCell>,
    /// `err(g)` strictly decreasing along decreasing g.
    pub monotone: bool,
    pub err_fit: Option<ScalingFit>,
    /// Intertwining defect against `τg`.
    pub intertwining_fit: Option<ScalingFit>,
    /// Observation index closest to a level crossing, if any.
    pub crossing_s: Option<f64>,
}

/// g-sweep with `τ = tau_rule(g)`.
pub fn run_gapless_experiment(model: &FriedrichsModel, gs: &[f64], tau_rule: TauRule, n_obs: usize) -> Result<GaplessReport> {
    if gs.iter().any(|&g| !(g > 0.0)) {
        return invalid("gapless sweep needs positive couplings");
    }
    let mut cells = gs
        .par_iter()
        .map(|&g| gapless_cell(&model.with_g(g), tau_rule.tau(g), n_obs))
        .collect::<Result<Vec<_>>>()?;
    cells.sort_by(|a, b| b.g.total_cmp(&a.g));
    let monotone = cells.windows(2).all(|w| w[1].err < w[0].err);
    let g: Vec<f64> = cells.iter().map(|x| x.g).collect();
    let err_fit = fit_loglog(&g, &cells.iter().map(|x| x.err).collect::<Vec<_>>(), &InlierRule::All).ok();
    let tg: Vec<f64> = cells.iter().map(|x| x.g * x.tau).collect();
    let intertwining_fit = fit_loglog(&tg, &cells.iter().map(|x| x.intertwining).collect::<Vec<_>>(), &InlierRule::All).ok();
    let crossing_s = model.lambda1(0.0).map(|_| {
        (0..=n_obs)
            .map(|k| k as f64 / n_obs as f64)
            .min_by(|a, b| {
                let d = |s: f64| (model.lambda0(s) - model.lambda1(s).unwrap_or(f64::INFINITY)).abs();
                d(*a).total_cmp(&d(*b))
            })
            .unwrap_or(0.5)
    });
    Ok(GaplessReport { cells, monotone, err_fit, intertwining_fit, crossing_s })
}

impl GaplessReport {
    pub fn to_report(&self, experiment: &str) -> ExperimentReport {
        let mut rep = ExperimentReport::default();
        for cell in &self.cells {
            rep.rows.push(ReportRow::new(experiment, "err", cell.err).g(cell.g).tau(cell.tau));
            rep.rows.push(ReportRow::new(experiment, "err_a", cell.err_a).g(cell.g).tau(cell.tau));
            rep.rows.push(ReportRow::new(experiment, "intertwining_defect", cell.intertwining).g(cell.g).tau(cell.tau));
            for (s, d) in cell.s.iter().zip(&cell.distance) {
                let mut row = ReportRow::new(experiment, "distance", *d).g(cell.g).tau(cell.tau).s(*s);
                if self.crossing_s.is_some_and(|x| (x - s).abs() < 1e-12) {
                    row = row.flag("crossing");
                }
                rep.rows.push(row);
            }
            rep.warnings.extend(cell.warnings.iter().map(|w| format!("g {}: {w}", cell.g)));
        }
        if let Some(f) = &self.err_fit {
            rep.fits.insert(format!("{experiment}_err_vs_g"), f.clone());
        }
        if let Some(f) = &self.intertwining_fit {
            rep.fits.insert(format!("{experiment}_intertwining_vs_tau_g"), f.clone());
        }
        rep.plot(&format!("{experiment}_err_vs_g"), "g", "err", self.cells.iter().map(|c| (c.g, c.err)).collect());
        rep
    }
}

/// Sweep over g at fixed τ: intertwining defect of `U_a^0` against `τg`.
pub fn intertwining_sweep(model: &FriedrichsModel, gs: &[f64], tau: f64, n_obs: usize) -> Result<(Vec<(f64, f64)>, ScalingFit)> {
    let r = run_gapless_experiment(model, gs, TauRule::Fixed(tau), n_obs)?;
    let pts: Vec<(f64, f64)> = r.cells.iter().map(|c| (c.g * c.tau, c.intertwining)).collect();
    let fit = r.intertwining_fit.ok_or(Error::TooFewInliers(pts.len()))?;
    Ok((pts, fit))
}

/// Result of [`x_epsilon_diagnostic`].
#[derive(Clone, Debug)]
pub struct XEpsilonProfile {
    /// `(ε, ε‖R_0(λ_0 + iε)ψ‖ / ‖ψ‖)`.
    pub profile: Vec<(f64, f64)>,
    /// `ε` excluded from the fit (below twice the continuum spacing).
    pub excluded: Vec<f64>,
    pub fit: ScalingFit,
}

/// `ε‖R_0(λ_0(s) + iε, s)ψ‖` for `ψ = Ṗ_0(s)P_0(s)φ(s)`.
pub fn x_epsilon_diagnostic(model: &FriedrichsModel, s: f64, eps_list: &[f64]) -> Result<XEpsilonProfile> {
    let branch = model.branch();
    let dp = crate::spectral::projector_derivative(|x| branch(x), s, 1e-4)?;
    let phi = model.phi(s);
    let psi = dp.operator.apply(&model.branch()(s)?.operator.apply(&phi));
    x_epsilon_profile(model, s, &psi, eps_list)
}

/// `ε‖R_0(λ_0(s) + iε, s)ψ‖ / ‖ψ‖` for an arbitrary vector.
pub fn x_epsilon_profile(model: &FriedrichsModel, s: f64, psi: &DVector<C64>, eps_list: &[f64]) -> Result<XEpsilonProfile> {
    let h0 = model.h0(s);
    let l0 = model.lambda0(s);
    let floor = 2.0 * model.local_spacing(l0);
    let nrm = psi.norm();
    if nrm == 0.0 {
        return invalid("diagnostic vector vanishes");
    }
    let mut profile = Vec::new();
    let mut mask = Vec::new();
    let mut excluded = Vec::new();
    for &eps in eps_list {
        let solver = h0.factor_resolvent(C64::new(l0, eps))?;
        let val = eps * solver.solve(psi).norm() / nrm;
        profile.push((eps, val));
        mask.push(eps >= floor);
        if eps < floor {
            excluded.push(eps);
        }
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = profile.iter().cloned().unzip();
    let fit = fit_loglog(&xs, &ys, &InlierRule::Mask(mask))?;
    Ok(XEpsilonProfile { profile, excluded, fit })
}

/// Crossing run: gapless sweep with `λ_0`, `λ_1` crossing at `s = ½`, plus branch continuity.
#[derive(Clone, Debug)]
pub struct CrossingReport {
    pub gapless: GaplessReport,
    /// `‖P_0(½ − δ) − P_0(½ + δ)‖`.
    pub continuity_jump: f64,
    pub delta: f64,
}

pub fn crossing_scenario(model: &FriedrichsModel, gs: &[f64], tau_rule: TauRule, n_obs: usize, delta: f64) -> Result<CrossingReport> {
    let model = if model.crossing.is_some() { model.clone() } else { model.clone().with_crossing(Crossing::default()) };
    let gapless = run_gapless_experiment(&model, gs, tau_rule, n_obs)?;
    let (a, b) = (model.phi(0.5 - delta), model.phi(0.5 + delta));
    // Rank-one orthogonal projectors: ‖P − Q‖ = sin∠(a, b).
    let continuity_jump = (1.0 - a.dotc(&b).norm_sqr() / (a.norm_squared() * b.norm_squared())).max(0.0).sqrt();
    Ok(CrossingReport { gapless, continuity_jump, delta })
}
