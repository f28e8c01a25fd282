//! Report rows, summary and plot data on disk.

use crate::error::{Error, Result};
use crate::harness::fit::ScalingFit;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

pub const CSV_HEADER: [&str; 11] = ["experiment", "tau", "g", "theta", "epsilon", "s", "metric", "value", "lower", "upper", "flags"];

/// One measured quantity with its parameter tuple.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub experiment: String,
    pub tau: Option<f64>,
    pub g: Option<f64>,
    pub theta: Option<f64>,
    pub epsilon: Option<f64>,
    pub s: Option<f64>,
    pub metric: String,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub flags: Vec<String>,
}

impl ReportRow {
    pub fn new(experiment: &str, metric: &str, value: f64) -> Self {
        ReportRow {
            experiment: experiment.into(),
            tau: None,
            g: None,
            theta: None,
            epsilon: None,
            s: None,
            metric: metric.into(),
            value,
            lower: None,
            upper: None,
            flags: Vec::new(),
        }
    }
    pub fn tau(mut self, v: f64) -> Self {
        self.tau = Some(v);
        self
    }
    pub fn g(mut self, v: f64) -> Self {
        self.g = Some(v);
        self
    }
    pub fn theta(mut self, v: f64) -> Self {
        self.theta = Some(v);
        self
    }
    pub fn epsilon(mut self, v: f64) -> Self {
        self.epsilon = Some(v);
        self
    }
    pub fn s(mut self, v: f64) -> Self {
        self.s = Some(v);
        self
    }
    pub fn bounds(mut self, lower: f64, upper: f64) -> Self {
        self.lower = Some(lower);
        self.upper = Some(upper);
        self
    }
    pub fn flag(mut self, f: &str) -> Self {
        self.flags.push(f.into());
        self
    }

    fn key(&self) -> (String, [f64; 5], String) {
        let k = |v: Option<f64>| v.unwrap_or(f64::NEG_INFINITY);
        (self.experiment.clone(), [k(self.tau), k(self.g), k(self.theta), k(self.epsilon), k(self.s)], self.metric.clone())
    }
}

/// Stable order by parameter tuple; ties keep emission order.
pub fn sort_rows(rows: &mut [ReportRow]) {
    rows.sort_by(|a, b| {
        let (ea, pa, ma) = a.key();
        let (eb, pb, mb) = b.key();
        ea.cmp(&eb)
            .then_with(|| pa.iter().zip(&pb).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal))
            .then_with(|| ma.cmp(&mb))
    });
}

/// 17 significant digits, `.` as decimal point; non-finite values spelled out.
pub fn format_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(format_value).unwrap_or_default()
}

pub fn write_rows_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(CSV_HEADER).map_err(io_err)?;
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            opt(r.tau),
            opt(r.g),
            opt(r.theta),
            opt(r.epsilon),
            opt(r.s),
            r.metric.clone(),
            format_value(r.value),
            opt(r.lower),
            opt(r.upper),
            r.flags.join(";"),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::InvalidInput(e.to_string()))
}

/// Pass/fail of one named acceptance gate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Gate {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Gate {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Gate { name: name.into(), passed, detail: detail.into() }
    }
}

/// `(x, y)` series for one figure.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlotSeries {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
}

/// Everything an experiment reports.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub fits: BTreeMap<String, ScalingFit>,
    pub gates: Vec<Gate>,
    pub plots: Vec<PlotSeries>,
    pub warnings: Vec<String>,
    pub errors: Vec<String>,
    /// Configuration echoed into the summary.
    pub config: Option<serde_json::Value>,
}

impl ExperimentReport {
    pub fn all_passed(&self) -> bool {
        self.errors.is_empty() && self.gates.iter().all(|g| g.passed)
    }

    pub fn merge(&mut self, other: ExperimentReport) {
        self.rows.extend(other.rows);
        self.fits.extend(other.fits);
        self.gates.extend(other.gates);
        self.plots.extend(other.plots);
        self.warnings.extend(other.warnings);
        self.errors.extend(other.errors);
    }

    pub fn gate(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.gates.push(Gate::new(name, passed, detail));
    }

    pub fn plot(&mut self, name: &str, x_label: &str, y_label: &str, points: Vec<(f64, f64)>) {
        self.plots.push(PlotSeries { name: name.into(), x_label: x_label.into(), y_label: y_label.into(), points });
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    experiment: &'a str,
    passed: bool,
    gates: &'a [Gate],
    fits: &'a BTreeMap<String, ScalingFit>,
    warnings: &'a [String],
    errors: &'a [String],
    config: &'a Option<serde_json::Value>,
}

/// Writes `rows.csv`, `summary.json` and `plotdata/<name>.csv` under `out`.
pub fn write_report(out: &Path, experiment: &str, report: &ExperimentReport) -> Result<()> {
    fs::create_dir_all(out.join("plotdata")).map_err(io_err)?;
    let mut rows = report.rows.clone();
    sort_rows(&mut rows);
    write_rows_csv(&out.join("rows.csv"), &rows)?;
    let summary = Summary {
        experiment,
        passed: report.all_passed(),
        gates: &report.gates,
        fits: &report.fits,
        warnings: &report.warnings,
        errors: &report.errors,
        config: &report.config,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::InvalidInput(e.to_string()))?;
    fs::write(out.join("summary.json"), json).map_err(io_err)?;
    for p in &report.plots {
        let mut w = csv::Writer::from_path(out.join("plotdata").join(format!("{}.csv", p.name))).map_err(io_err)?;
        w.write_record([&p.x_label, &p.y_label]).map_err(io_err)?;
        for (x, y) in &p.points {
            w.write_record([format_value(*x), format_value(*y)]).map_err(io_err)?;
        }
        w.flush().map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    Ok(())
}

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("cannot write report: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_has_seventeen_digits() {
        let s = format_value(0.1);
        let mantissa = s.split('e').next().unwrap().replace(['.', '-'], "");
        assert_eq!(mantissa.len(), 17);
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
        assert_eq!(format_value(f64::INFINITY), "inf");
    }

    #[test]
    fn rows_sort_by_parameters() {
        let mut rows = vec![
            ReportRow::new("a", "m", 1.0).tau(32.0),
            ReportRow::new("a", "m", 2.0).tau(16.0),
            ReportRow::new("a", "k", 3.0),
        ];
        sort_rows(&mut rows);
        assert_eq!(rows.iter().map(|r| r.value).collect::<Vec<_>>(), vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn report_files_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut rep = ExperimentReport::default();
        rep.rows.push(ReportRow::new("x", "err", 0.5).tau(4.0).flag("coarse"));
        rep.gate("g1", true, "ok");
        rep.plot("curve", "tau", "err", vec![(1.0, 2.0)]);
        write_report(dir.path(), "x", &rep).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("rows.csv")).unwrap();
        assert!(csv.starts_with("experiment,tau,g,theta,epsilon,s,metric,value,lower,upper,flags\n"));
        assert!(csv.contains("coarse"));
        let js: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(js["passed"], true);
        assert!(dir.path().join("plotdata/curve.csv").exists());
    }
}
