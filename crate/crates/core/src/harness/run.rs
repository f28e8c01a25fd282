//! Experiment dispatch, acceptance gates and exit status.

use crate::dilation::{
    nonnormal_adiabatic_check, oblique_branch, rs_sweep, run_isolated_experiment, survival_check, table_branch,
    theta_plateau, triangular_family, DilatedFamily, EmitterModel,
};
use crate::error::{Error, Result};
use crate::friedrichs::{
    crossing_scenario, fgr_check, intertwining_sweep, run_gapless_experiment, x_epsilon_diagnostic, Crossing,
    FriedrichsModel, TauRule,
};
use crate::harness::config::{ExperimentConfig, GaplessConfig, IsolatedConfig, ShapeConfig};
use crate::harness::fit::{fit_linear, fit_loglog, InlierRule};
use crate::harness::report::{write_report, ExperimentReport, ReportRow};
use crate::lattice::Grid1D;
use crate::shape::{
    adiabatic_slope_check, escape_time_metric, gaussian_decay_check, run_shape_experiment, s_grid, MetastableEnsemble,
    Profile, ShapeOptions, WellFamily,
};
use crate::C64;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Shape,
    Nonnormal,
    Isolated,
    Gapless,
    Crossing,
    Diagnostics,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Shape,
        Experiment::Nonnormal,
        Experiment::Isolated,
        Experiment::Gapless,
        Experiment::Crossing,
        Experiment::Diagnostics,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Shape => "shape",
            Experiment::Nonnormal => "nonnormal",
            Experiment::Isolated => "isolated",
            Experiment::Gapless => "gapless",
            Experiment::Crossing => "crossing",
            Experiment::Diagnostics => "diagnostics",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment {s:?}")))
    }
}

/// Exit status of a finished run.
pub fn exit_code(report: &ExperimentReport, failure: Option<&Error>) -> i32 {
    match failure {
        Some(e) => e.exit_code(),
        None if report.all_passed() => 0,
        None => 1,
    }
}

fn within(v: f64, target: f64, tol: f64) -> bool {
    (v - target).abs() <= tol
}

fn slope_detail(f: &crate::harness::ScalingFit) -> String {
    format!("slope {:.4}, R2 {:.4}", f.slope, f.r2)
}

fn shape(cfg: &ShapeConfig) -> Result<ExperimentReport> {
    let well = WellFamily::new(cfg.theta, cfg.epsilon, cfg.profile)?;
    let grid = Grid1D::symmetric(cfg.n_points, cfg.half_width)?;
    let ensemble = MetastableEnsemble::new(cfg.weights.clone())?;
    let opts = ShapeOptions { n_obs: cfg.n_obs, zero_delta_v: cfg.zero_delta_v, ds_scale: cfg.ds_scale };
    let sweep = run_shape_experiment(&well, &grid, &ensemble, &cfg.taus, &opts)?;
    let mut rep = sweep.to_report("shape", &well);

    let excess = sweep.runs.iter().map(|r| r.envelope_excess).fold(0.0, f64::max);
    rep.gate("shape_envelope", excess <= cfg.envelope_tol, format!("largest excess {excess:.3e}"));
    if cfg.profile == Profile::Harmonic || cfg.zero_delta_v {
        match &sweep.slope {
            Some(f) => rep.gate("shape_slope", within(f.slope, -1.0, 0.2) && f.r2 >= 0.95, slope_detail(f)),
            None => rep.gate("shape_slope", false, "fewer than 3 taus"),
        }
    }

    // One ds/2 refinement probe at the largest τ; steps never cross an observation point.
    let last = sweep.runs.last().expect("nonempty sweep");
    let tau = last.tau;
    let effective = opts.step(tau).min(1.0 / opts.n_obs as f64);
    let fine = ShapeOptions { ds_scale: Some(0.5 * effective * tau), ..opts.clone() };
    let refined = run_shape_experiment(&well, &grid, &ensemble, &[tau], &fine)?;
    let floor = (refined.runs[0].err - last.err).abs();
    rep.rows.push(ReportRow::new("shape", "integrator_floor", floor).tau(tau));
    rep.gate("integrator_floor", floor <= cfg.floor_tol, format!("ds/2 change {floor:.3e} at tau {tau}"));

    if !cfg.escape_thetas.is_empty() && cfg.profile != Profile::Harmonic {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &th in &cfg.escape_thetas {
            let w = WellFamily::new(th, cfg.epsilon, cfg.profile)?;
            let (f_max, tau_l) = escape_time_metric(&w, &grid, &ensemble, &s_grid(16), cfg.taus[0])?;
            rep.rows.push(ReportRow::new("shape", "escape_f_max", f_max).theta(th).epsilon(cfg.epsilon));
            rep.rows.push(ReportRow::new("shape", "escape_tau_l", tau_l).theta(th).epsilon(cfg.epsilon));
            xs.push(th.powf(2.0 / 3.0));
            ys.push(f_max.ln());
        }
        let f = fit_linear(&xs, &ys, &InlierRule::All)?;
        rep.plot("shape_log_fmax_vs_theta23", "theta^(2/3)", "log f_max", xs.iter().copied().zip(ys.iter().copied()).collect());
        rep.gate("escape_scaling", f.slope < 0.0 && f.r2 >= 0.9, slope_detail(&f));
        rep.fits.insert("shape_log_fmax_vs_theta23".into(), f);
    }

    if cfg.gaussian_levels > 0 {
        let slopes = gaussian_decay_check(&well.h1(&grid, 0.0)?, &grid, cfg.gaussian_levels)?;
        let reference = -0.5 * well.omega(0.0);
        for (k, &sl) in slopes.iter().enumerate() {
            rep.rows.push(ReportRow::new("shape", &format!("tail_slope_level{k}"), sl).s(0.0));
        }
        let ok = slopes.iter().all(|&sl| sl <= -0.25 && (sl / reference - 1.0).abs() <= 0.25);
        rep.gate("gaussian_decay", ok, format!("slopes {slopes:.4?}, reference {reference}"));
    }

    if !cfg.adiabatic_taus.is_empty() {
        let a = adiabatic_slope_check(&well, &grid, 0, &cfg.adiabatic_taus, cfg.n_obs, cfg.adiabatic_ds_scale)?;
        for (t, e) in a.taus.iter().zip(&a.errs) {
            rep.rows.push(ReportRow::new("shape", "adiabatic_err", *e).tau(*t));
        }
        rep.plot("shape_adiabatic_err_vs_tau", "tau", "err", a.taus.iter().copied().zip(a.errs.iter().copied()).collect());
        rep.warnings.extend(a.warnings.iter().map(|w| format!("adiabatic: {w}")));
        rep.gate("adiabatic_slope", within(a.fit.slope, -1.0, 0.2) && a.fit.r2 >= 0.95, slope_detail(&a.fit));
        rep.fits.insert("shape_adiabatic_err_vs_tau".into(), a.fit);
    }
    Ok(rep)
}

fn nonnormal(cfg: &crate::harness::config::NonnormalConfig) -> Result<ExperimentReport> {
    let fam = triangular_family(cfg.growth, false);
    let growth = cfg.growth;
    let table = oblique_branch(&fam, |s| C64::new(0.3 * s, growth), cfg.min_gap, 41)?;
    let chk = nonnormal_adiabatic_check(&fam, table_branch(table), &cfg.taus, cfg.n_obs)?;
    let mut rep = ExperimentReport::default();
    for (t, e) in chk.taus.iter().zip(&chk.errs) {
        rep.rows.push(ReportRow::new("nonnormal", "err", *e).tau(*t));
    }
    rep.rows.push(ReportRow::new("nonnormal", "growth_rate", chk.gamma));
    rep.rows.push(ReportRow::new("nonnormal", "envelope_constant", chk.envelope_constant));
    rep.plot("nonnormal_err_vs_tau", "tau", "err", chk.taus.iter().copied().zip(chk.errs.iter().copied()).collect());
    rep.gate("nonnormal_slope", within(chk.fit.slope, -1.0, 0.2) && chk.fit.r2 >= 0.95, slope_detail(&chk.fit));
    rep.fits.insert("nonnormal_err_vs_tau".into(), chk.fit);
    Ok(rep)
}

fn emitter(cfg: &IsolatedConfig) -> EmitterModel {
    EmitterModel {
        half_width: cfg.half_width,
        spacing: cfg.spacing,
        form_amplitude: cfg.form_amplitude,
        ..Default::default()
    }
}

fn plateau_rows(rep: &mut ExperimentReport, experiment: &str, cfg: &IsolatedConfig) -> Result<crate::dilation::Plateau> {
    let fam = DilatedFamily::new(emitter(cfg), cfg.g);
    let p = theta_plateau(&fam, 0.0, &cfg.plateau_thetas, f64::INFINITY, cfg.capture_radius)?;
    for (t, v) in p.theta_ims.iter().zip(&p.values) {
        rep.rows.push(ReportRow::new(experiment, "lambda_re", v.re).g(cfg.g).theta(*t).s(0.0));
        rep.rows.push(ReportRow::new(experiment, "lambda_im", v.im).g(cfg.g).theta(*t).s(0.0));
    }
    rep.rows.push(ReportRow::new(experiment, "theta_stability", p.stability).g(cfg.g).s(0.0));
    let base = p.values[0];
    rep.plot(
        &format!("{experiment}_theta_plateau"),
        "im_theta",
        "abs_lambda_shift",
        p.theta_ims.iter().zip(&p.values).map(|(t, v)| (*t, (v - base).norm())).collect(),
    );
    Ok(p)
}

fn isolated(cfg: &IsolatedConfig) -> Result<ExperimentReport> {
    let model = emitter(cfg);
    let theta = C64::new(0.0, cfg.theta_im);
    let mut rep = ExperimentReport::default();

    let p = plateau_rows(&mut rep, "isolated", cfg)?;
    let im_max = p.values.iter().map(|v| v.im).fold(f64::NEG_INFINITY, f64::max);
    rep.gate(
        "theta_plateau",
        p.stability <= cfg.plateau_threshold && im_max < 0.0,
        format!("stability {:.3e}, largest Im lambda {im_max:.3e}", p.stability),
    );

    let fam = DilatedFamily::new(model.clone(), cfg.g);
    let w = (cfg.survival_window[0], cfg.survival_window[1]);
    let sv = survival_check(&fam, 0.0, theta, w, cfg.survival_samples)?;
    let row = |m: &str, v: f64| ReportRow::new("isolated", m, v).g(cfg.g).theta(cfg.theta_im).s(0.0);
    rep.rows.push(row("lambda_g_im", sv.lambda.im));
    rep.rows.push(row("fitted_rate", sv.fitted_rate));
    rep.rows.push(row("residual_t1", sv.residual_t1));
    rep.rows.push(row("residual_t2", sv.residual_t2));
    rep.plot("isolated_survival", "t", "abs_amplitude", sv.samples.iter().map(|(t, a)| (*t, a.norm())).collect());
    rep.gate(
        "survival_rate",
        sv.relative_rate_error <= 0.1,
        format!("fitted {:.5e} vs Im lambda {:.5e}", sv.fitted_rate, sv.lambda.im),
    );
    rep.gate(
        "survival_residual",
        sv.residual_t2 < sv.residual_t1,
        format!("residual {:.3e} at t1, {:.3e} at t2", sv.residual_t1, sv.residual_t2),
    );

    let n = cfg.rs_order;
    let rs = rs_sweep(&model, 0.0, theta, &cfg.rs_gs, n)?;
    for x in &rs {
        rep.rows.push(ReportRow::new("isolated", &format!("rs_defect_n{n}"), x.defect).g(x.g).theta(cfg.theta_im));
        rep.rows.push(ReportRow::new("isolated", &format!("rs_a_minus_one_n{n}"), x.a_minus_one).g(x.g).theta(cfg.theta_im));
    }
    let gs: Vec<f64> = rs.iter().map(|x| x.g).collect();
    let d = fit_loglog(&gs, &rs.iter().map(|x| x.defect).collect::<Vec<_>>(), &InlierRule::All)?;
    let a = fit_loglog(&gs, &rs.iter().map(|x| x.a_minus_one).collect::<Vec<_>>(), &InlierRule::All)?;
    rep.gate("rs_defect_slope", d.slope >= n as f64 - 0.2, slope_detail(&d));
    rep.gate("rs_a_slope", a.slope >= 2.0 * n as f64 - 0.5, slope_detail(&a));
    rep.fits.insert("isolated_rs_defect_vs_g".into(), d);
    rep.fits.insert("isolated_rs_a_vs_g".into(), a);

    let sweep = run_isolated_experiment(&model, &cfg.sweep_gs, &cfg.sweep_taus, theta, cfg.n_obs, 1)?;
    let mut srep = sweep.to_report("isolated");
    for &g in cfg.sweep_gs.iter().filter(|&&g| g > 0.0) {
        let errs: Vec<f64> = sweep.cells.iter().filter(|c| c.g == g).map(|c| c.err).collect();
        let k = errs.iter().enumerate().min_by(|x, y| x.1.total_cmp(y.1)).map(|x| x.0).unwrap_or(0);
        srep.gate(
            &format!("mixed_nonmonotone_g{g}"),
            k > 0 && k + 1 < errs.len(),
            format!("minimum at index {k} of {}", errs.len()),
        );
    }
    if cfg.sweep_gs.contains(&0.0) {
        match sweep.slopes.iter().find(|x| x.0 == 0.0).and_then(|x| x.1.as_ref()) {
            Some(f) => srep.gate("pure_slope", within(f.slope, -1.0, 0.2) && f.r2 >= 0.95, slope_detail(f)),
            None => srep.gate("pure_slope", false, "fewer than 3 taus at g = 0"),
        }
    }
    rep.merge(srep);
    Ok(rep)
}

fn friedrichs_model(cfg: &GaplessConfig, nodes: usize) -> Result<FriedrichsModel> {
    let mut m = FriedrichsModel::new(nodes, 0.0)?;
    m.level = cfg.level;
    m.form_slope = cfg.form_slope;
    m.rotation = cfg.rotation;
    m.check()?;
    Ok(m)
}

fn x_epsilon_rows(rep: &mut ExperimentReport, experiment: &str, cfg: &GaplessConfig) -> Result<crate::friedrichs::XEpsilonProfile> {
    let x = x_epsilon_diagnostic(&friedrichs_model(cfg, cfg.statics_nodes)?, cfg.eps_s, &cfg.eps_list)?;
    for &(e, v) in &x.profile {
        let mut row = ReportRow::new(experiment, "x_epsilon", v).epsilon(e).s(cfg.eps_s);
        if x.excluded.contains(&e) {
            row = row.flag("below_floor");
        }
        rep.rows.push(row);
    }
    rep.plot(&format!("{experiment}_x_epsilon"), "epsilon", "eps_resolvent_norm", x.profile.clone());
    rep.fits.insert(format!("{experiment}_x_epsilon_vs_eps"), x.fit.clone());
    Ok(x)
}

fn gapless(cfg: &GaplessConfig) -> Result<ExperimentReport> {
    let model = friedrichs_model(cfg, cfg.nodes)?;
    let sweep = run_gapless_experiment(&model, &cfg.gs, TauRule::Power(cfg.tau_power), cfg.n_obs)?;
    let mut rep = sweep.to_report("gapless");
    let errs: Vec<String> = sweep.cells.iter().map(|c| format!("{:.4e}", c.err)).collect();
    rep.gate("gapless_monotone", sweep.monotone, format!("err along decreasing g: {}", errs.join(", ")));

    let (pts, f) = intertwining_sweep(&model, &cfg.gs, cfg.intertwining_tau, cfg.n_obs)?;
    for &(tg, d) in &pts {
        rep.rows.push(ReportRow::new("gapless", "intertwining_fixed_tau", d).tau(cfg.intertwining_tau).g(tg / cfg.intertwining_tau));
    }
    rep.plot("gapless_intertwining_vs_tau_g", "tau_g", "defect", pts);
    rep.gate("intertwining_slope", within(f.slope, 1.0, 0.3), slope_detail(&f));
    rep.fits.insert("gapless_intertwining_fixed_tau".into(), f);

    let statics = friedrichs_model(cfg, cfg.fgr_nodes)?;
    let [lo, hi, taper] = cfg.xi_window;
    let fgr = fgr_check(&statics, cfg.fgr_s, &cfg.fgr_gs, cfg.boundary_eta, (lo, hi, taper))?;
    for x in &fgr.samples {
        rep.rows.push(ReportRow::new("gapless", "fgr_fitted_rate", x.fitted_rate).g(x.g).s(cfg.fgr_s));
        rep.rows.push(ReportRow::new("gapless", "fgr_predicted_rate", x.predicted_rate).g(x.g).s(cfg.fgr_s));
        rep.rows.push(ReportRow::new("gapless", "fgr_a_minus_one", x.a_minus_one).g(x.g).s(cfg.fgr_s));
    }
    for &(s, eta, im) in &fgr.sign_samples {
        rep.rows.push(ReportRow::new("gapless", "im_level_shift", im).s(s).epsilon(eta));
    }
    rep.rows.push(ReportRow::new("gapless", "boundary_error", fgr.boundary_error).s(cfg.fgr_s).epsilon(cfg.boundary_eta));
    let worst = fgr.sign_samples.iter().map(|x| x.2).fold(f64::NEG_INFINITY, f64::max);
    rep.gate("fgr_slope", within(fgr.rate_fit.slope, 2.0, 0.1), slope_detail(&fgr.rate_fit));
    rep.gate("fgr_sign", worst <= 1e-8, format!("largest Im F {worst:.3e}"));
    rep.gate("fgr_boundary", fgr.boundary_error <= 0.02, format!("relative error {:.3e}", fgr.boundary_error));
    match &fgr.a_fit {
        Some(a) => rep.gate("fgr_a_slope", within(a.slope, 2.0, 0.3), slope_detail(a)),
        None => rep.gate("fgr_a_slope", false, "fit failed"),
    }
    rep.plot("gapless_fgr_rate_vs_g", "g", "rate", fgr.rate_fit.x.iter().copied().zip(fgr.rate_fit.y.iter().copied()).collect());
    rep.fits.insert("gapless_fgr_rate_vs_g".into(), fgr.rate_fit);
    if let Some(a) = fgr.a_fit {
        rep.fits.insert("gapless_fgr_a_vs_g".into(), a);
    }

    let x = x_epsilon_rows(&mut rep, "gapless", cfg)?;
    rep.gate("x_epsilon_exponent", (0.3..=0.7).contains(&x.fit.slope), slope_detail(&x.fit));
    Ok(rep)
}

fn crossing(g: &GaplessConfig, c: &crate::harness::config::CrossingConfig) -> Result<ExperimentReport> {
    let model =
        friedrichs_model(g, g.nodes)?.with_crossing(Crossing { slope: c.slope, coupling_ratio: c.coupling_ratio });
    let r = crossing_scenario(&model, &g.gs, TauRule::Power(g.tau_power), g.n_obs, c.delta)?;
    let mut rep = r.gapless.to_report("crossing");
    let errs: Vec<String> = r.gapless.cells.iter().map(|x| format!("{:.4e}", x.err)).collect();
    let flagged = r.gapless.crossing_s.is_some();
    rep.gate(
        "crossing_monotone",
        r.gapless.monotone && flagged,
        format!("err along decreasing g: {}; crossing node {:?}", errs.join(", "), r.gapless.crossing_s),
    );
    rep.rows.push(ReportRow::new("crossing", "continuity_jump", r.continuity_jump).s(0.5).epsilon(r.delta));
    rep.gate("branch_continuity", r.continuity_jump <= c.continuity_tol, format!("jump {:.3e}", r.continuity_jump));
    Ok(rep)
}

fn diagnostics(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut rep = ExperimentReport::default();
    x_epsilon_rows(&mut rep, "diagnostics", &cfg.gapless)?;
    plateau_rows(&mut rep, "diagnostics", &cfg.isolated)?;
    Ok(rep)
}

/// Runs one experiment; a module error is returned next to the partial report.
pub fn run_experiment(experiment: Experiment, cfg: &ExperimentConfig) -> (ExperimentReport, Option<Error>) {
    let out = match experiment {
        Experiment::Shape => shape(&cfg.shape),
        Experiment::Nonnormal => nonnormal(&cfg.nonnormal),
        Experiment::Isolated => isolated(&cfg.isolated),
        Experiment::Gapless => gapless(&cfg.gapless),
        Experiment::Crossing => crossing(&cfg.gapless, &cfg.crossing),
        Experiment::Diagnostics => diagnostics(cfg),
    };
    let (mut rep, err) = match out {
        Ok(r) => (r, None),
        Err(e) => {
            let mut r = ExperimentReport::default();
            r.errors.push(e.to_string());
            (r, Some(e))
        }
    };
    rep.config = serde_json::to_value(cfg).ok();
    (rep, err)
}

/// Runs on a pool of `workers` threads, writes the artifacts under `out` and returns the exit code.
pub fn run(experiment: Experiment, cfg: &ExperimentConfig, out: &Path, workers: usize) -> Result<i32> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let (rep, err) = pool.install(|| run_experiment(experiment, cfg));
    write_report(out, experiment.name(), &rep)?;
    Ok(exit_code(&rep, err.as_ref()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::parse_config_str;

    #[test]
    fn experiment_names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert!(matches!("stark".parse::<Experiment>(), Err(Error::Config(_))));
    }

    #[test]
    fn nonnormal_run_passes_and_writes() {
        let cfg = parse_config_str("[nonnormal]\ntaus = [16.0, 32.0, 64.0]\nn_obs = 8\n").unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run(Experiment::Nonnormal, &cfg, dir.path(), 1).unwrap(), 0);
        let js: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(js["gates"][0]["name"], "nonnormal_slope");
        assert_eq!(js["config"]["nonnormal"]["n_obs"], 8);
    }

    #[test]
    fn module_error_is_captured() {
        let mut cfg = ExperimentConfig::default();
        cfg.nonnormal.min_gap = 50.0;
        let (rep, err) = run_experiment(Experiment::Nonnormal, &cfg);
        assert_eq!(rep.errors.len(), 1);
        assert_eq!(exit_code(&rep, err.as_ref()), 3);
    }
}
