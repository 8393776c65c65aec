//! Output files: trajectory and snapshot CSVs, snapshot JSON, run manifest
//! and residual reports.
//!
//! Floats are written in shortest round-trip form, so identical runs give
//! byte-identical CSVs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::json;

use crate::config::ScenarioConfig;
use crate::error::Result;
use crate::profile::{fmt_f64, GridProfile};
use crate::residual::{Equation, ResidualReport, RungStatus};
use crate::sim::{Snapshot, Trajectory};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn unix_time() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Columns `t, x1, …, xn, U, dhat`; one row per step.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = traj.states.first().map_or(0, |s| s.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.push("U".into());
    header.push("dhat".into());
    w.write_record(&header)?;
    for k in 0..traj.times.len() {
        let mut row = vec![fmt_f64(traj.times[k])];
        row.extend(traj.states[k].iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(traj.controls[k]));
        row.push(fmt_f64(traj.estimates[k]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn columns<'a>(name: &str, p: &'a GridProfile, out: &mut Vec<(String, &'a GridProfile, usize)>) {
    if p.arity() == 1 {
        out.push((name.to_string(), p, 0));
    } else {
        for c in 0..p.arity() {
            out.push((format!("{name}_{}", c + 1), p, c));
        }
    }
}

/// Per-node fields and kernel profiles of one snapshot.
pub fn write_snapshot_csv(path: &Path, s: &Snapshot) -> Result<()> {
    let k = &s.kernels;
    let mut cols = Vec::new();
    for (name, p) in [
        ("u", &s.u),
        ("uhat", &s.uhat),
        ("utilde", &s.utilde),
        ("phat", &s.phat),
        ("what", &s.what),
        ("what_x", &s.what_x),
        ("what_xx", &s.what_xx),
        ("what_xxx", &s.what_xxx),
        ("p1", &k.first.p1),
        ("p2", &k.first.p2),
        ("p3", &k.derivative.p3),
        ("p4", &k.derivative.p4),
        ("q1", &k.first.q1),
        ("q2", &k.first.q2),
        ("q3", &k.derivative.q3),
        ("q4", &k.derivative.q4),
        ("q5", &k.derivative.q5),
        ("q6", &k.derivative.q6),
        ("uhat_t", &k.rates.uhat_t),
        ("uhat_xt", &k.rates.uhat_xt),
        ("phat_t", &k.rates.phat_t),
    ] {
        columns(name, p, &mut cols);
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["x".to_string()];
    header.extend(cols.iter().map(|(n, _, _)| n.clone()));
    w.write_record(&header)?;
    for i in 0..s.what.len() {
        let mut row = vec![fmt_f64(s.what.x(i))];
        row.extend(cols.iter().map(|(_, p, c)| fmt_f64(p.node(i)[*c])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Scalars of one snapshot.
pub fn snapshot_json(s: &Snapshot) -> serde_json::Value {
    let m = s.m();
    let phi1: Vec<Vec<f64>> = s
        .transition
        .from_origin(m)
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect();
    json!({
        "t": s.t,
        "step": s.step,
        "grid": m,
        "state": s.state.iter().copied().collect::<Vec<_>>(),
        "control": s.control,
        "true_delay": s.true_delay,
        "estimate": s.estimate,
        "what_at_1": s.what.at(m),
        "utilde_at_1": s.utilde.at(m),
        "f_utilde": s.kernels.first.f_utilde.iter().copied().collect::<Vec<_>>(),
        "q1_t": s.kernels.q1_t,
        "q7": s.kernels.q7,
        "transition_at_1": phi1,
        "transition_max_condition": s.transition.max_condition(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub kind: &'static str,
    pub message: String,
    pub t: Option<f64>,
    pub state: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub version: &'static str,
    pub command: String,
    pub config: ScenarioConfig,
    pub started: f64,
    pub finished: f64,
    pub wall_seconds: f64,
    pub status: &'static str,
    pub failure: Option<Failure>,
    pub rungs: Vec<RungStatus>,
    /// Paths relative to the output directory.
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &ScenarioConfig) -> Self {
        Self {
            version: VERSION,
            command: command.into(),
            config: config.clone(),
            started: unix_time(),
            finished: 0.0,
            wall_seconds: 0.0,
            status: "running",
            failure: None,
            rungs: Vec::new(),
            files: Vec::new(),
        }
    }

    /// Stamps the end time and writes the manifest into `dir`.
    pub fn finish(&mut self, dir: &Path, status: &'static str) -> Result<PathBuf> {
        self.finished = unix_time();
        self.wall_seconds = self.finished - self.started;
        self.status = status;
        let path = dir.join(&self.config.manifest_file);
        let name = self.config.manifest_file.clone();
        if !self.files.contains(&name) {
            self.files.push(name);
        }
        fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}

/// JSON, text table and per-rung CSV of a residual report; returns the
/// written file names.
pub fn write_residual_report(dir: &Path, report: &ResidualReport) -> Result<Vec<String>> {
    fs::write(dir.join("residual_report.json"), serde_json::to_string_pretty(report)?)?;
    fs::write(dir.join("residual_report.txt"), report.table())?;
    let mut w = csv::Writer::from_path(dir.join("convergence.csv"))?;
    let mut header = vec!["rung".to_string(), "m".into(), "dt".into()];
    header.extend(Equation::ALL.iter().map(|e| e.name().to_string()));
    w.write_record(&header)?;
    for (r, rung) in report.rungs.iter().enumerate() {
        let mut row = vec![r.to_string(), rung.m.to_string(), fmt_f64(rung.dt)];
        for e in Equation::ALL {
            let v = report
                .equation(e)
                .and_then(|er| er.max_norms.get(r).copied())
                .map(fmt_f64)
                .unwrap_or_default();
            row.push(v);
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(vec![
        "residual_report.json".into(),
        "residual_report.txt".into(),
        "convergence.csv".into(),
    ])
}
