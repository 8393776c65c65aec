//! `pbk` command line: `simulate`, `verify` and `sweep`.
//!
//! Exit codes: 0 success, 1 output could not be written, 2 config error,
//! 3 blow-up, 4 numeric failure, 5 verification failed.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::report::{
    snapshot_json, write_residual_report, write_snapshot_csv, write_trajectory_csv, Failure, RunManifest,
};
use crate::residual::{analysis_window_start, convergence_study, evaluate_run, parse_ladder, EquationKind};
use crate::sim::{run_scenario, RunOutput};

pub const EXIT_OK: u8 = 0;
pub const EXIT_IO: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_BLOW_UP: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;
pub const EXIT_VERIFY_FAILED: u8 = 5;

pub fn exit_code(err: &Error) -> u8 {
    match err.kind() {
        "config" => EXIT_CONFIG,
        "blow_up" => EXIT_BLOW_UP,
        "io" => EXIT_IO,
        _ => EXIT_NUMERIC,
    }
}

#[derive(Debug, Parser)]
#[command(name = "pbk", version, about = "Predictor-feedback simulation and residual verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write its trajectory, snapshots and manifest.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "PBK_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Run a refinement ladder and certify the transformed equations.
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated rungs `M` or `M:dt`.
        #[arg(long, default_value = "50,100,200")]
        ladder: String,
        #[arg(long, env = "PBK_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Run a grid of scenarios derived from one config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `key=v1,v2;key2=w1,w2`; cells are the cartesian product.
        #[arg(long)]
        grid: String,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, env = "PBK_OUT", default_value = "out")]
        out: PathBuf,
    },
}

/// Parses arguments and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Simulate { config, out } => cmd_simulate(&config, &out),
        Command::Verify { config, ladder, out } => cmd_verify(&config, &ladder, &out),
        Command::Sweep { config, grid, workers, out } => cmd_sweep(&config, &grid, workers, &out),
    }
}

fn report_error(err: &Error) -> u8 {
    eprintln!("error: {err}");
    exit_code(err)
}

fn failure_of(err: &Error) -> Failure {
    let (t, state) = match err {
        Error::BlowUp { t, state, .. } => (Some(*t), Some(state.clone())),
        Error::NoConvergence { t, .. } => (Some(*t), None),
        _ => (None, None),
    };
    Failure { kind: err.kind(), message: err.to_string(), t, state }
}

fn status_of(code: u8) -> &'static str {
    match code {
        EXIT_OK => "ok",
        EXIT_IO => "io_error",
        EXIT_CONFIG => "config_error",
        EXIT_BLOW_UP => "blow_up",
        EXIT_NUMERIC => "numeric_failure",
        _ => "verification_failed",
    }
}

/// Writes trajectory and snapshots of a (possibly partial) run.
fn write_run(dir: &Path, cfg: &ScenarioConfig, run: &RunOutput, manifest: &mut RunManifest) -> Result<()> {
    write_trajectory_csv(&dir.join(&cfg.trajectory_file), &run.trajectory)?;
    manifest.files.push(cfg.trajectory_file.clone());
    if cfg.write_snapshots && !run.triplets.is_empty() {
        let snap_dir = dir.join(&cfg.snapshot_dir);
        fs::create_dir_all(&snap_dir)?;
        for tr in &run.triplets {
            let s = &tr.center;
            let stem = format!("snapshot_{:08}", s.step);
            write_snapshot_csv(&snap_dir.join(format!("{stem}.csv")), s)?;
            fs::write(
                snap_dir.join(format!("{stem}.json")),
                serde_json::to_string_pretty(&snapshot_json(s))?,
            )?;
            manifest.files.push(format!("{}/{stem}.csv", cfg.snapshot_dir));
            manifest.files.push(format!("{}/{stem}.json", cfg.snapshot_dir));
        }
    }
    Ok(())
}

/// Runs one scenario into `dir`. Returns the exit code and the run, if any.
pub fn simulate_into(cfg: &ScenarioConfig, dir: &Path) -> (u8, Option<RunOutput>) {
    if let Err(e) = fs::create_dir_all(dir) {
        return (report_error(&e.into()), None);
    }
    let mut manifest = RunManifest::new("simulate", cfg);
    let (code, run) = match run_scenario(cfg) {
        Ok(run) => (EXIT_OK, run),
        Err(fail) => {
            eprintln!("error: {}", fail.error);
            let mut failure = failure_of(&fail.error);
            // errors raised inside a step carry no time; report the last
            // completed step, or the initial condition
            let traj = &fail.partial.trajectory;
            if failure.t.is_none() {
                failure.t = Some(traj.times.last().copied().unwrap_or(0.0));
            }
            if failure.state.is_none() {
                failure.state = Some(traj.states.last().cloned().unwrap_or_else(|| cfg.x0.clone()));
            }
            manifest.failure = Some(failure);
            (exit_code(&fail.error), fail.partial)
        }
    };
    if let Err(e) = write_run(dir, cfg, &run, &mut manifest) {
        return (report_error(&e), Some(run));
    }
    if let Err(e) = manifest.finish(dir, status_of(code)) {
        return (report_error(&e), Some(run));
    }
    (code, Some(run))
}

pub fn cmd_simulate(config: &Path, out: &Path) -> u8 {
    let cfg = match ScenarioConfig::load(config) {
        Ok(c) => c,
        Err(e) => return report_error(&e),
    };
    simulate_into(&cfg, out).0
}

pub fn cmd_verify(config: &Path, ladder: &str, out: &Path) -> u8 {
    let cfg = match ScenarioConfig::load(config) {
        Ok(c) => c,
        Err(e) => return report_error(&e),
    };
    let rungs = match parse_ladder(ladder, &cfg) {
        Ok(r) => r,
        Err(e) => return report_error(&e),
    };
    let report = match convergence_study(&cfg, &rungs) {
        Ok(r) => r,
        Err(e) => return report_error(&e),
    };
    print!("{}", report.table());
    let mut manifest = RunManifest::new("verify", &cfg);
    manifest.rungs = report.rungs.clone();
    let failed_rung = report.rungs.iter().find(|r| !r.ok);
    let code = match failed_rung {
        Some(r) => match r.error_kind {
            Some("blow_up") => EXIT_BLOW_UP,
            Some("config") => EXIT_CONFIG,
            _ => EXIT_NUMERIC,
        },
        None if report.pass => EXIT_OK,
        None => EXIT_VERIFY_FAILED,
    };
    if let Some(r) = failed_rung {
        manifest.failure = Some(Failure {
            kind: r.error_kind.unwrap_or("numeric"),
            message: r.message.clone().unwrap_or_default(),
            t: None,
            state: None,
        });
    }
    let written = fs::create_dir_all(out)
        .map_err(Error::from)
        .and_then(|_| write_residual_report(out, &report));
    match written {
        Ok(files) => manifest.files.extend(files),
        Err(e) => return report_error(&e),
    }
    if let Err(e) = manifest.finish(out, status_of(code)) {
        return report_error(&e);
    }
    code
}

/// Parses `key=v1,v2;key2=w1` into keys and their candidate TOML values.
pub fn parse_grid(spec: &str) -> Result<Vec<(String, Vec<toml::Value>)>> {
    spec.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|axis| {
            let (key, values) = axis
                .split_once('=')
                .ok_or_else(|| Error::config("grid", format!("expected key=values in `{axis}`")))?;
            let values = values
                .split(',')
                .map(|raw| parse_toml_value(raw.trim()))
                .collect::<Vec<_>>();
            if values.is_empty() {
                return Err(Error::config("grid", format!("no values for `{key}`")));
            }
            Ok((key.trim().to_string(), values))
        })
        .collect()
}

fn parse_toml_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Cartesian product of the grid axes, first axis slowest.
fn cells(axes: &[(String, Vec<toml::Value>)]) -> Vec<Vec<toml::Value>> {
    axes.iter().fold(vec![Vec::new()], |acc, (_, values)| {
        acc.iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut cell = prefix.clone();
                    cell.push(v.clone());
                    cell
                })
            })
            .collect()
    })
}

struct CellResult {
    code: u8,
    final_abs_x: Option<f64>,
    max_what_boundary: Option<f64>,
    max_utilde_boundary: Option<f64>,
    max_residual: Option<f64>,
}

fn run_cell(base: &toml::Table, axes: &[(String, Vec<toml::Value>)], values: &[toml::Value], dir: &Path) -> CellResult {
    let mut table = base.clone();
    for ((key, _), v) in axes.iter().zip(values) {
        table.insert(key.clone(), v.clone());
    }
    let empty = |code| CellResult {
        code,
        final_abs_x: None,
        max_what_boundary: None,
        max_utilde_boundary: None,
        max_residual: None,
    };
    let cfg = match toml::to_string(&table)
        .map_err(|e| Error::config("grid", e.to_string()))
        .and_then(|text| ScenarioConfig::from_toml_str(&text))
    {
        Ok(c) => c,
        Err(e) => return empty(report_error(&e)),
    };
    let (code, run) = simulate_into(&cfg, dir);
    let Some(run) = run else { return empty(code) };
    let max_residual = (code == EXIT_OK)
        .then(|| {
            let setup = cfg.plant_setup().ok()?;
            let start = analysis_window_start(&cfg).ok()?;
            let res = evaluate_run(setup.plant.as_ref(), setup.controller.as_ref(), &run, start).ok()?;
            Some(
                res.norms
                    .iter()
                    .filter(|(e, _)| e.kind() == EquationKind::Differential)
                    .map(|(_, n)| n.max)
                    .fold(0.0, f64::max),
            )
        })
        .flatten();
    CellResult {
        code,
        final_abs_x: run.final_state().map(|x| x.iter().fold(0.0_f64, |a, v| a.max(v.abs()))),
        max_what_boundary: Some(run.max_what_boundary),
        max_utilde_boundary: Some(run.max_utilde_boundary),
        max_residual,
    }
}

pub fn cmd_sweep(config: &Path, grid: &str, workers: usize, out: &Path) -> u8 {
    let base: toml::Table = match fs::read_to_string(config)
        .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", config.display())))
        .and_then(|text| toml::from_str(&text).map_err(|e| Error::config("<document>", e.to_string())))
    {
        Ok(t) => t,
        Err(e) => return report_error(&e),
    };
    let axes = match parse_grid(grid) {
        Ok(a) => a,
        Err(e) => return report_error(&e),
    };
    if let Err(e) = fs::create_dir_all(out) {
        return report_error(&e.into());
    }
    let cells = cells(&axes);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(p) => p,
        Err(e) => return report_error(&Error::Usage(e.to_string())),
    };
    let results: Vec<CellResult> = pool.install(|| {
        cells
            .par_iter()
            .enumerate()
            .map(|(i, values)| run_cell(&base, &axes, values, &out.join(format!("cell_{i:03}"))))
            .collect()
    });

    let write = || -> Result<()> {
        let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
        let mut header = vec!["cell".to_string()];
        header.extend(axes.iter().map(|(k, _)| k.clone()));
        header.extend(
            ["final_abs_x", "max_what_boundary", "max_utilde_boundary", "max_residual", "status", "exit_code"]
                .map(String::from),
        );
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map(crate::profile::fmt_f64).unwrap_or_default();
        for (i, (values, r)) in cells.iter().zip(&results).enumerate() {
            let mut row = vec![format!("cell_{i:03}")];
            row.extend(values.iter().map(|v| match v {
                toml::Value::String(s) => s.clone(),
                other => other.to_string(),
            }));
            row.push(opt(r.final_abs_x));
            row.push(opt(r.max_what_boundary));
            row.push(opt(r.max_utilde_boundary));
            row.push(opt(r.max_residual));
            row.push(status_of(r.code).to_string());
            row.push(r.code.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    };
    if let Err(e) = write() {
        return report_error(&e);
    }
    results.iter().map(|r| r.code).max().unwrap_or(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_a_cartesian_product() {
        let axes = parse_grid("schedule_base=0.4,0.5,0.6; schedule=\"ramp\",sinusoid").unwrap();
        assert_eq!(axes.len(), 2);
        assert_eq!(axes[1].1[1], toml::Value::String("sinusoid".into()));
        let c = cells(&axes);
        assert_eq!(c.len(), 6);
        assert_eq!(c[1], vec![toml::Value::Float(0.4), toml::Value::String("sinusoid".into())]);
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(exit_code(&Error::config("dt", "bad")), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::PredictorEscape { x: 0.5 }), EXIT_BLOW_UP);
        assert_eq!(exit_code(&Error::NumericOverflow("x".into())), EXIT_NUMERIC);
    }
}
