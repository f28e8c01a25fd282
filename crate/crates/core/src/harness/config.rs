//! Strict TOML configuration. Every section is optional and fully defaulted;
//! unknown keys and invariant violations are reported with their line.

use crate::error::{Error, Result};
use crate::shape::Profile;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Recorded in the summary; every experiment is deterministic.
    pub seed: u64,
    pub shape: ShapeConfig,
    pub nonnormal: NonnormalConfig,
    pub isolated: IsolatedConfig,
    pub gapless: GaplessConfig,
    pub crossing: CrossingConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapeConfig {
    pub theta: f64,
    pub epsilon: f64,
    pub profile: Profile,
    pub n_points: usize,
    pub half_width: f64,
    pub taus: Vec<f64>,
    pub weights: Vec<f64>,
    pub n_obs: usize,
    /// Replace `H` by `H_1`.
    pub zero_delta_v: bool,
    /// Step override `ds = ds_scale/τ` (default: guideline, at most 10⁻³).
    pub ds_scale: Option<f64>,
    /// Largest accepted ds/2 refinement difference.
    pub floor_tol: f64,
    /// Tolerance of the envelope containment.
    pub envelope_tol: f64,
    /// θ values of the escape-time regression; empty skips it.
    pub escape_thetas: Vec<f64>,
    /// Levels of the Gaussian-decay check; 0 skips it.
    pub gaussian_levels: usize,
    /// τ values of the `U_a` vs `U_1` comparison; empty skips it.
    pub adiabatic_taus: Vec<f64>,
    /// `ds = min(10⁻³, adiabatic_ds_scale/τ)` for the full-propagator comparison.
    pub adiabatic_ds_scale: f64,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        ShapeConfig {
            theta: 5.0,
            epsilon: 0.5,
            profile: Profile::GaussianDamped,
            n_points: 256,
            half_width: 12.0,
            taus: vec![16.0, 32.0, 64.0, 128.0],
            weights: vec![0.7, 0.3],
            n_obs: 64,
            zero_delta_v: false,
            ds_scale: None,
            floor_tol: 1e-3,
            envelope_tol: 1e-6,
            escape_thetas: vec![3.0, 4.0, 5.0, 6.0],
            gaussian_levels: 3,
            adiabatic_taus: vec![16.0, 32.0, 64.0, 128.0, 256.0],
            adiabatic_ds_scale: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NonnormalConfig {
    pub taus: Vec<f64>,
    pub n_obs: usize,
    /// Imaginary part added to the tracked eigenvalue.
    pub growth: f64,
    pub min_gap: f64,
}

impl Default for NonnormalConfig {
    fn default() -> Self {
        NonnormalConfig { taus: vec![16.0, 32.0, 64.0, 128.0, 256.0], n_obs: 16, growth: 0.0, min_gap: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IsolatedConfig {
    pub half_width: f64,
    pub spacing: f64,
    pub form_amplitude: f64,
    /// Coupling of the plateau and survival checks.
    pub g: f64,
    pub theta_im: f64,
    pub plateau_thetas: Vec<f64>,
    pub plateau_threshold: f64,
    pub capture_radius: f64,
    pub survival_window: [f64; 2],
    pub survival_samples: usize,
    pub rs_gs: Vec<f64>,
    pub rs_order: usize,
    pub sweep_gs: Vec<f64>,
    pub sweep_taus: Vec<f64>,
    pub n_obs: usize,
}

impl Default for IsolatedConfig {
    fn default() -> Self {
        IsolatedConfig {
            half_width: 100.0,
            spacing: 0.1,
            form_amplitude: 1.5,
            g: 0.05,
            theta_im: 0.35,
            plateau_thetas: (0..=8).map(|k| 0.2 + 0.025 * k as f64).collect(),
            plateau_threshold: 1e-4,
            capture_radius: 0.25,
            survival_window: [20.0, 100.0],
            survival_samples: 400,
            rs_gs: vec![0.025, 0.05, 0.1, 0.2],
            rs_order: 2,
            sweep_gs: vec![0.0, 0.05],
            sweep_taus: vec![4.0, 8.0, 16.0, 32.0, 64.0],
            n_obs: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaplessConfig {
    pub level: f64,
    pub form_slope: f64,
    pub rotation: f64,
    /// Continuum nodes for propagation.
    pub nodes: usize,
    /// Continuum nodes for the ε-diagnostic.
    pub statics_nodes: usize,
    /// Continuum nodes for the golden-rule survival fits and the boundary value.
    pub fgr_nodes: usize,
    pub gs: Vec<f64>,
    /// `τ = g^tau_power`.
    pub tau_power: f64,
    /// Fixed τ of the intertwining sweep.
    pub intertwining_tau: f64,
    pub n_obs: usize,
    pub fgr_gs: Vec<f64>,
    pub fgr_s: f64,
    /// `[lo, hi, taper]` of the spectral cutoff ξ.
    pub xi_window: [f64; 3],
    pub boundary_eta: f64,
    pub eps_list: Vec<f64>,
    pub eps_s: f64,
}

impl Default for GaplessConfig {
    fn default() -> Self {
        GaplessConfig {
            level: 1.0,
            form_slope: 0.3,
            rotation: 0.01,
            nodes: 400,
            statics_nodes: 2000,
            fgr_nodes: 4000,
            gs: vec![0.2, 0.1, 0.05, 0.025],
            tau_power: -2.0 / 3.0,
            intertwining_tau: 2.0,
            n_obs: 40,
            fgr_gs: vec![0.025, 0.05, 0.1, 0.2],
            fgr_s: 0.0,
            xi_window: [0.15, 1.85, 0.1],
            boundary_eta: 1e-2,
            eps_list: (0..8).map(|k| 2e-3 * 2f64.powi(k)).collect(),
            eps_s: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossingConfig {
    pub slope: f64,
    pub coupling_ratio: f64,
    pub delta: f64,
    pub continuity_tol: f64,
}

impl Default for CrossingConfig {
    fn default() -> Self {
        CrossingConfig { slope: 0.4, coupling_ratio: 0.8, delta: 1e-2, continuity_tol: 0.1 }
    }
}

/// Line of `key = ...` inside `[section]` (1-based).
fn line_of(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, l) in src.lines().enumerate() {
        let t = l.trim();
        if let Some(h) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            current = h.trim().to_string();
        } else if current == section && t.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('=')) {
            return Some(i + 1);
        }
    }
    None
}

/// Violated invariant: section, key, message.
pub type Violation = (&'static str, String, String);

fn push(out: &mut Vec<Violation>, section: &'static str, key: &str, msg: &str) {
    out.push((section, key.into(), msg.into()));
}

fn positive_list(section: &'static str, name: &str, v: &[f64], out: &mut Vec<Violation>) {
    if v.is_empty() {
        push(out, section, name, "must not be empty");
    } else if v.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        push(out, section, name, "entries must be positive and finite");
    }
}

impl ExperimentConfig {
    /// Every violated invariant.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let s = &self.shape;
        positive_list("shape", "taus", &s.taus, &mut out);
        if !(s.theta > 0.0) {
            push(&mut out, "shape", "theta", "must be positive");
        }
        if !(s.epsilon > 0.0 && s.epsilon < 1.0) {
            push(&mut out, "shape", "epsilon", "must lie in (0, 1)");
        }
        if s.n_points < 16 {
            push(&mut out, "shape", "n_points", "needs at least 16 points");
        }
        if s.weights.is_empty() || s.weights.iter().any(|&w| !(w > 0.0)) {
            push(&mut out, "shape", "weights", "must be nonempty and positive");
        }
        if s.n_obs == 0 {
            push(&mut out, "shape", "n_obs", "must be positive");
        }
        if s.ds_scale.is_some_and(|d| !(d > 0.0)) {
            push(&mut out, "shape", "ds_scale", "must be positive");
        }
        let n = &self.nonnormal;
        positive_list("nonnormal", "taus", &n.taus, &mut out);
        if !(n.min_gap > 0.0) {
            push(&mut out, "nonnormal", "min_gap", "must be positive");
        }
        let i = &self.isolated;
        if !(i.spacing > 0.0 && i.half_width > 2.0 * i.spacing) {
            push(&mut out, "isolated", "spacing", "need 0 < spacing < half_width/2");
        }
        if !(i.theta_im > 0.0 && i.theta_im < std::f64::consts::FRAC_PI_4) {
            push(&mut out, "isolated", "theta_im", "must lie in (0, pi/4)");
        }
        if !(i.survival_window[0] < i.survival_window[1]) {
            push(&mut out, "isolated", "survival_window", "needs t1 < t2");
        }
        if i.rs_order == 0 {
            push(&mut out, "isolated", "rs_order", "must be at least 1");
        }
        positive_list("isolated", "sweep_taus", &i.sweep_taus, &mut out);
        positive_list("isolated", "rs_gs", &i.rs_gs, &mut out);
        let g = &self.gapless;
        positive_list("gapless", "gs", &g.gs, &mut out);
        positive_list("gapless", "fgr_gs", &g.fgr_gs, &mut out);
        positive_list("gapless", "eps_list", &g.eps_list, &mut out);
        if g.nodes < 4 || g.statics_nodes < 4 || g.fgr_nodes < 4 {
            push(&mut out, "gapless", "nodes", "continuum needs at least 4 nodes");
        }
        if !(g.level > 0.0 && g.level < 2.0) {
            push(&mut out, "gapless", "level", "must be embedded in (0, 2)");
        }
        if !(self.crossing.delta > 0.0 && self.crossing.delta < 0.5) {
            push(&mut out, "crossing", "delta", "must lie in (0, 0.5)");
        }
        out
    }
}

/// Parses and validates a configuration string.
pub fn parse_config_str(src: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(src).map_err(|e| {
        let line = e.span().map(|sp| src[..sp.start.min(src.len())].matches('\n').count() + 1);
        let msg = e.message().to_string();
        match line {
            Some(l) => Error::Config(format!("line {l}: {msg}")),
            None => Error::Config(msg),
        }
    })?;
    if let Some((section, key, msg)) = cfg.violations().into_iter().next() {
        return Err(match line_of(src, section, &key) {
            Some(l) => Error::Config(format!("line {l}: [{section}] {key}: {msg}")),
            None => Error::Config(format!("[{section}] {key}: {msg}")),
        });
    }
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config_str(&src)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_is_fully_defaulted() {
        let c = parse_config_str("[shape]\n").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.shape.theta, 5.0);
        let echo = toml::to_string(&c).unwrap();
        assert_eq!(parse_config_str(&echo).unwrap(), c);
    }

    #[test]
    fn empty_taus_rejected_with_line() {
        let e = parse_config_str("seed = 1\n[shape]\ntaus = []\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("line 3") && msg.contains("taus"), "{msg}");
    }

    #[test]
    fn unknown_key_named() {
        let e = parse_config_str("[shape]\ntheta = 4.0\ntau_max = 10\n").unwrap_err().to_string();
        assert!(e.contains("tau_max") && e.contains("line 3"), "{e}");
    }

    #[test]
    fn malformed_syntax_rejected() {
        let e = parse_config_str("[shape\n").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn missing_file_rejected() {
        assert!(matches!(parse_config(Path::new("/nonexistent/reslab.toml")), Err(Error::Config(_))));
    }

    #[test]
    fn profile_parses_snake_case() {
        let c = parse_config_str("[shape]\nprofile = \"harmonic\"\n").unwrap();
        assert_eq!(c.shape.profile, Profile::Harmonic);
    }
}
