use std::fs;
use std::path::Path;
use std::process::Command;

fn reslab(experiment: &str, config: &str, out: &Path, extra: &[&str]) -> (i32, String) {
    let cfg = out.join("config.toml");
    fs::create_dir_all(out).unwrap();
    fs::write(&cfg, config).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_reslab"))
        .arg(experiment)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(out.join("run"))
        .args(extra)
        .output()
        .unwrap();
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stderr).into_owned())
}

fn summary(out: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join("run/summary.json")).unwrap()).unwrap()
}

fn gate(js: &serde_json::Value, name: &str) -> bool {
    let gates = js["gates"].as_array().unwrap();
    let hits: Vec<_> = gates.iter().filter(|g| g["name"] == name).collect();
    assert_eq!(hits.len(), 1, "gate {name} in {gates:?}");
    hits[0]["passed"].as_bool().unwrap()
}

const HARMONIC: &str = "[shape]\nprofile = \"harmonic\"\nadiabatic_taus = []\ngaussian_levels = 0\n";

#[test]
fn harmonic_shape_run_passes_slope_gate() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = reslab("shape", HARMONIC, dir.path(), &["--workers", "1"]);
    assert_eq!(code, 0, "{err}");
    let js = summary(dir.path());
    assert!(gate(&js, "shape_slope") && gate(&js, "shape_envelope"));
    assert_eq!(js["config"]["shape"]["profile"], "harmonic");
    let rows = fs::read_to_string(dir.path().join("run/rows.csv")).unwrap();
    assert!(rows.starts_with("experiment,tau,g,theta,epsilon,s,metric,value,lower,upper,flags\n"));
    assert!(dir.path().join("run/plotdata/shape_err_vs_tau.csv").exists());
}

#[test]
fn coarse_step_fails_integrator_gate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[shape]\nds_scale = 20.0\nn_obs = 4\ntaus = [16.0, 32.0, 64.0]\nescape_thetas = []\ngaussian_levels = 0\nadiabatic_taus = []\n";
    let (code, err) = reslab("shape", cfg, dir.path(), &[]);
    assert_eq!(code, 1, "{err}");
    assert!(!gate(&summary(dir.path()), "integrator_floor"));
}

#[test]
fn configuration_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = reslab("shape", "[shape]\ntaus = []\n", dir.path(), &[]);
    assert_eq!(code, 2);
    assert!(err.contains("line 2") && err.contains("taus"), "{err}");
    let (code, err) = reslab("shape", "[shape]\ntau_max = 3\n", dir.path(), &[]);
    assert_eq!(code, 2);
    assert!(err.contains("tau_max"), "{err}");
    let (code, _) = reslab("stark", "", dir.path(), &[]);
    assert_eq!(code, 2);
}

#[test]
fn numerical_failure_is_recorded_and_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = reslab("nonnormal", "[nonnormal]\nmin_gap = 50.0\n", dir.path(), &[]);
    assert_eq!(code, 3);
    let js = summary(dir.path());
    assert_eq!(js["passed"], false);
    assert!(js["errors"][0].as_str().unwrap().contains("gap"));
}

#[test]
fn diagnostics_emit_profiles_without_gates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[isolated]\nhalf_width = 40.0\nspacing = 0.2\n[gapless]\nstatics_nodes = 800\n";
    let (code, err) = reslab("diagnostics", cfg, dir.path(), &[]);
    assert_eq!(code, 0, "{err}");
    assert!(summary(dir.path())["gates"].as_array().unwrap().is_empty());
    assert!(dir.path().join("run/plotdata/diagnostics_x_epsilon.csv").exists());
    assert!(dir.path().join("run/plotdata/diagnostics_theta_plateau.csv").exists());
}

#[test]
fn rows_are_identical_across_runs_and_worker_counts() {
    let cfg = "seed = 7\n[nonnormal]\ntaus = [16.0, 32.0, 64.0]\nn_obs = 8\n";
    let read = |workers: &str| {
        let dir = tempfile::tempdir().unwrap();
        let (code, _) = reslab("nonnormal", cfg, dir.path(), &["--workers", workers]);
        assert_eq!(code, 0);
        fs::read(dir.path().join("run/rows.csv")).unwrap()
    };
    let first = read("1");
    assert_eq!(first, read("1"));
    assert_eq!(first, read("3"));
}

#[test]
fn seed_flag_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = reslab("nonnormal", "[nonnormal]\ntaus = [16.0, 32.0, 64.0]\nn_obs = 4\n", dir.path(), &["--seed", "42"]);
    assert_eq!(code, 0);
    assert_eq!(summary(dir.path())["config"]["seed"], 42);
}
