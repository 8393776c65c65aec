//! Residuals of the transformed closed-loop equations on snapshot triplets,
//! and convergence orders under simultaneous grid and step refinement.
//!
//! Time derivatives are central differences over a triplet; spatial
//! derivatives come from the snapshot profiles (second-order stencils). The
//! kernels enter as computed analytically, so every residual compares an
//! analytic expression against a finite-difference oracle.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::history::{propagate_kinks, DelaySchedule};
use crate::predictor::predictor_forcing_integral;
use crate::profile::{derivative, GridProfile};
use crate::sim::{run_scenario, RunOutput, Snapshot, Triplet};

/// Residuals at or below this are treated as roundoff.
pub const ROUNDOFF_FLOOR: f64 = 1e-12;

/// Kinks of `U` up to this order must stay out of the sampled window: the
/// residuals use up to four derivatives of `U`, and their second-order
/// stencils need one more.
pub const SMOOTHNESS_ORDER: usize = 5;

/// Slack allowed when checking monotone decrease along a ladder.
const MONOTONE_SLACK: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Equation {
    State,
    TransportU,
    TransportUhat,
    TransportPhat,
    What,
    Utilde,
    UtildeX,
    WhatX,
    WhatXx,
    BoundaryWhat,
    BoundaryUtilde,
    BoundaryUtildeX,
    BoundaryWhatX,
    BoundaryWhatXx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EquationKind {
    /// Discretised differential identity, expected to converge at order two.
    Differential,
    /// Holds by construction; checked against the roundoff floor.
    Algebraic,
    /// Boundary identity evaluated with one-sided stencils.
    Boundary,
}

impl Equation {
    pub const ALL: [Equation; 14] = [
        Equation::State,
        Equation::TransportU,
        Equation::TransportUhat,
        Equation::TransportPhat,
        Equation::What,
        Equation::Utilde,
        Equation::UtildeX,
        Equation::WhatX,
        Equation::WhatXx,
        Equation::BoundaryWhat,
        Equation::BoundaryUtilde,
        Equation::BoundaryUtildeX,
        Equation::BoundaryWhatX,
        Equation::BoundaryWhatXx,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Equation::State => "state",
            Equation::TransportU => "transport_u",
            Equation::TransportUhat => "transport_uhat",
            Equation::TransportPhat => "transport_phat",
            Equation::What => "what",
            Equation::Utilde => "utilde",
            Equation::UtildeX => "utilde_x",
            Equation::WhatX => "what_x",
            Equation::WhatXx => "what_xx",
            Equation::BoundaryWhat => "bc_what",
            Equation::BoundaryUtilde => "bc_utilde",
            Equation::BoundaryUtildeX => "bc_utilde_x",
            Equation::BoundaryWhatX => "bc_what_x",
            Equation::BoundaryWhatXx => "bc_what_xx",
        }
    }

    pub fn kind(self) -> EquationKind {
        match self {
            Equation::BoundaryWhat | Equation::BoundaryUtilde => EquationKind::Algebraic,
            Equation::BoundaryUtildeX | Equation::BoundaryWhatX | Equation::BoundaryWhatXx => {
                EquationKind::Boundary
            }
            _ => EquationKind::Differential,
        }
    }

    /// Nodes excluded at each end of the grid.
    fn margin(self) -> usize {
        match self {
            Equation::UtildeX | Equation::WhatX | Equation::WhatXx => 2,
            _ => 1,
        }
    }
}

fn check_triplet(tr: &Triplet) -> Result<()> {
    let m = tr.center.m();
    if tr.before.m() != m || tr.after.m() != m {
        return Err(Error::MissingTriplet("triplet members live on different grids".into()));
    }
    if !(tr.delta > 0.0) {
        return Err(Error::MissingTriplet("time-difference step must be positive".into()));
    }
    let gap = |a: &Snapshot, b: &Snapshot| b.t - a.t;
    if (gap(&tr.before, &tr.center) - tr.delta).abs() > 1e-9 || (gap(&tr.center, &tr.after) - tr.delta).abs() > 1e-9 {
        return Err(Error::MissingTriplet(format!(
            "snapshots at {}, {}, {} are not spaced by {}",
            tr.before.t, tr.center.t, tr.after.t, tr.delta
        )));
    }
    Ok(())
}

fn time_rate(tr: &Triplet, field: impl Fn(&Snapshot) -> GridProfile) -> GridProfile {
    field(&tr.after)
        .combine(0.5 / tr.delta, &field(&tr.before), -0.5 / tr.delta)
        .expect("same grid")
}

/// `(X(t + δ) − X(t − δ))/2δ − f(X, ŵ(0) + ũ(0) + κ(X))`.
pub fn residual_state_equation(
    model: &dyn crate::plant::PlantModel,
    controller: &dyn crate::plant::Controller,
    tr: &Triplet,
) -> Result<Vec<f64>> {
    check_triplet(tr)?;
    let c = &tr.center;
    let rate = (&tr.after.state - &tr.before.state) / (2.0 * tr.delta);
    let input = c.what.at(0) + c.utilde.at(0) + controller.kappa(&c.state);
    Ok((rate - model.f(&c.state, input)).iter().copied().collect())
}

/// Profile residual `D̂ŵ_t − ŵ_x − Ḋ̂q1 + q2·f_ũ` and `|ŵ(1)|`.
pub fn residual_w_system(tr: &Triplet) -> Result<(GridProfile, f64)> {
    check_triplet(tr)?;
    let c = &tr.center;
    let k = &c.kernels.first;
    let wt = time_rate(tr, |s| s.what.clone());
    let e = c.estimate;
    let values = (0..=c.m())
        .map(|i| e.value * wt.at(i) - c.what_x.at(i) - e.rate * k.q1.at(i) + k.q2.vector(i).dot(&k.f_utilde))
        .collect();
    Ok((GridProfile::scalar(c.m(), values)?, c.what.at(c.m()).abs()))
}

/// Profile residual `Dũ_t − ũ_x + D̃p1 + Ḋ̂p2` and `|ũ(1)|`.
pub fn residual_utilde_system(tr: &Triplet) -> Result<(GridProfile, f64)> {
    check_triplet(tr)?;
    let c = &tr.center;
    let k = &c.kernels.first;
    let ut = time_rate(tr, |s| s.utilde.clone());
    let ux = derivative(&c.utilde, 1);
    let values = (0..=c.m())
        .map(|i| c.true_delay * ut.at(i) - ux.at(i) + c.mismatch() * k.p1.at(i) + c.estimate.rate * k.p2.at(i))
        .collect();
    Ok((GridProfile::scalar(c.m(), values)?, c.utilde.at(c.m()).abs()))
}

#[derive(Debug, Clone)]
pub struct DerivativeResiduals {
    /// `Dũ_xt − ũ_xx + D̃p3 + Ḋ̂p4`.
    pub utilde_x: GridProfile,
    /// `D̂ŵ_xt − ŵ_xx − Ḋ̂q3 + q4·f_ũ`.
    pub what_x: GridProfile,
    /// `D̂ŵ_xxt − ŵ_xxx − Ḋ̂q5 + q6·f_ũ`.
    pub what_xx: GridProfile,
    /// `ũ_x(1) − D̃p1(1)`.
    pub bc_utilde_x: f64,
    /// `ŵ_x(1) + Ḋ̂q1(1) − q2(1)·f_ũ`.
    pub bc_what_x: f64,
    /// `ŵ_xx(1) + Ḋ̂q3(1) − q4(1)·f_ũ − D̂q7`.
    pub bc_what_xx: f64,
}

pub fn residual_derivative_systems(tr: &Triplet) -> Result<DerivativeResiduals> {
    check_triplet(tr)?;
    let c = &tr.center;
    let m = c.m();
    let first = &c.kernels.first;
    let dk = &c.kernels.derivative;
    let f_ut = &first.f_utilde;
    let e = c.estimate;

    let ux = derivative(&c.utilde, 1);
    let uxx = derivative(&c.utilde, 2);
    let uxt = time_rate(tr, |s| derivative(&s.utilde, 1));
    let wxt = time_rate(tr, |s| s.what_x.clone());
    let wxxt = time_rate(tr, |s| s.what_xx.clone());

    let utilde_x = (0..=m)
        .map(|i| c.true_delay * uxt.at(i) - uxx.at(i) + c.mismatch() * dk.p3.at(i) + e.rate * dk.p4.at(i))
        .collect();
    let what_x = (0..=m)
        .map(|i| e.value * wxt.at(i) - c.what_xx.at(i) - e.rate * dk.q3.at(i) + dk.q4.vector(i).dot(f_ut))
        .collect();
    let what_xx = (0..=m)
        .map(|i| e.value * wxxt.at(i) - c.what_xxx.at(i) - e.rate * dk.q5.at(i) + dk.q6.vector(i).dot(f_ut))
        .collect();
    Ok(DerivativeResiduals {
        utilde_x: GridProfile::scalar(m, utilde_x)?,
        what_x: GridProfile::scalar(m, what_x)?,
        what_xx: GridProfile::scalar(m, what_xx)?,
        bc_utilde_x: ux.at(m) - c.mismatch() * first.p1.at(m),
        bc_what_x: c.what_x.at(m) + e.rate * first.q1.at(m) - first.q2.vector(m).dot(f_ut),
        bc_what_xx: c.what_xx.at(m) + e.rate * dk.q3.at(m) - dk.q4.vector(m).dot(f_ut) - e.value * c.kernels.q7,
    })
}

#[derive(Debug, Clone)]
pub struct TransportResiduals {
    /// `Du_t − u_x`.
    pub u: GridProfile,
    /// `D̂û_t − û_x − Ḋ̂(x − 1)û_x`.
    pub uhat: GridProfile,
    /// `D̂p̂_t − p̂_x − D̂Φ(x, 0)f_ũ − Ḋ̂D̂∫₀ˣΦ(x, y)(...)dy`, largest component.
    pub phat: GridProfile,
}

pub fn residual_transport_systems(model: &dyn crate::plant::PlantModel, tr: &Triplet) -> Result<TransportResiduals> {
    check_triplet(tr)?;
    let c = &tr.center;
    let m = c.m();
    let e = c.estimate;
    let ut = time_rate(tr, |s| s.u.clone());
    let ux = derivative(&c.u, 1);
    let uht = time_rate(tr, |s| s.uhat.clone());
    let uhx = derivative(&c.uhat, 1);
    let u = (0..=m).map(|i| c.true_delay * ut.at(i) - ux.at(i)).collect();
    let uhat = (0..=m)
        .map(|i| e.value * uht.at(i) - uhx.at(i) - e.rate * (c.uhat.x(i) - 1.0) * uhx.at(i))
        .collect();

    let pt = time_rate(tr, |s| s.phat.clone());
    let px = derivative(&c.phat, 1);
    let integral = predictor_forcing_integral(model, &c.phat, &c.uhat, &uhx, &c.transition);
    let f_ut = &c.kernels.first.f_utilde;
    let phat = (0..=m)
        .map(|i| {
            let r = pt.vector(i) * e.value
                - px.vector(i)
                - c.transition.from_origin(i) * f_ut * e.value
                - &integral[i] * (e.rate * e.value);
            r.amax()
        })
        .collect();
    Ok(TransportResiduals {
        u: GridProfile::scalar(m, u)?,
        uhat: GridProfile::scalar(m, uhat)?,
        phat: GridProfile::scalar(m, phat)?,
    })
}

/// Max and L² norms of one equation's residual over a run.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Norms {
    pub max: f64,
    /// Root mean over snapshots of the squared spatial L² norm.
    pub l2: f64,
    pub samples: usize,
}

#[derive(Debug, Default)]
struct Accum {
    max: f64,
    sum_sq: f64,
    count: usize,
    samples: usize,
}

impl Accum {
    fn profile(&mut self, p: &GridProfile, margin: usize) {
        let m = p.m();
        let h = 1.0 / m as f64;
        let mut sq = 0.0;
        for i in margin..=m - margin {
            let v = p.at(i).abs();
            self.max = self.max.max(v);
            sq += h * v * v;
            self.samples += 1;
        }
        self.sum_sq += sq;
        self.count += 1;
    }

    fn values(&mut self, values: &[f64]) {
        let mut sq = 0.0;
        for v in values {
            self.max = self.max.max(v.abs());
            sq += v * v;
            self.samples += 1;
        }
        self.sum_sq += sq;
        self.count += 1;
    }

    fn norms(&self) -> Norms {
        Norms {
            max: self.max,
            l2: if self.count == 0 { 0.0 } else { (self.sum_sq / self.count as f64).sqrt() },
            samples: self.samples,
        }
    }
}

/// Residual norms of every equation over the triplets centred at
/// `t ≥ window_start`.
#[derive(Debug, Clone, Serialize)]
pub struct RunResiduals {
    pub m: usize,
    pub delta: f64,
    pub window_start: f64,
    pub triplets: usize,
    pub norms: Vec<(Equation, Norms)>,
}

impl RunResiduals {
    pub fn get(&self, eq: Equation) -> Norms {
        self.norms.iter().find(|(e, _)| *e == eq).map(|(_, n)| *n).unwrap_or_default()
    }
}

pub fn evaluate_run(
    model: &dyn crate::plant::PlantModel,
    controller: &dyn crate::plant::Controller,
    run: &RunOutput,
    window_start: f64,
) -> Result<RunResiduals> {
    let mut acc: Vec<Accum> = Equation::ALL.iter().map(|_| Accum::default()).collect();
    let slot = |eq: Equation| Equation::ALL.iter().position(|e| *e == eq).expect("listed");
    let mut used = 0;
    let (mut m, mut delta) = (0, 0.0);
    for tr in run.triplets.iter().filter(|tr| tr.center.t >= window_start - 1e-12) {
        used += 1;
        m = tr.center.m();
        delta = tr.delta;
        acc[slot(Equation::State)].values(&residual_state_equation(model, controller, tr)?);
        let tp = residual_transport_systems(model, tr)?;
        acc[slot(Equation::TransportU)].profile(&tp.u, Equation::TransportU.margin());
        acc[slot(Equation::TransportUhat)].profile(&tp.uhat, Equation::TransportUhat.margin());
        acc[slot(Equation::TransportPhat)].profile(&tp.phat, Equation::TransportPhat.margin());
        let (w, w1) = residual_w_system(tr)?;
        acc[slot(Equation::What)].profile(&w, Equation::What.margin());
        acc[slot(Equation::BoundaryWhat)].values(&[w1]);
        let (u, u1) = residual_utilde_system(tr)?;
        acc[slot(Equation::Utilde)].profile(&u, Equation::Utilde.margin());
        acc[slot(Equation::BoundaryUtilde)].values(&[u1]);
        let d = residual_derivative_systems(tr)?;
        acc[slot(Equation::UtildeX)].profile(&d.utilde_x, Equation::UtildeX.margin());
        acc[slot(Equation::WhatX)].profile(&d.what_x, Equation::WhatX.margin());
        acc[slot(Equation::WhatXx)].profile(&d.what_xx, Equation::WhatXx.margin());
        acc[slot(Equation::BoundaryUtildeX)].values(&[d.bc_utilde_x]);
        acc[slot(Equation::BoundaryWhatX)].values(&[d.bc_what_x]);
        acc[slot(Equation::BoundaryWhatXx)].values(&[d.bc_what_xx]);
    }
    if used == 0 {
        return Err(Error::MissingTriplet(format!("no snapshot triplet centred at t ≥ {window_start}")));
    }
    Ok(RunResiduals {
        m,
        delta,
        window_start,
        triplets: used,
        norms: Equation::ALL.iter().zip(&acc).map(|(e, a)| (*e, a.norms())).collect(),
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_order(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

/// Order estimate of one equation along a ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Order {
    /// Every rung at or below the roundoff floor.
    Exact,
    Fitted(f64),
    /// Fewer than three rungs, or a zero residual on some rung only.
    Undetermined,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquationReport {
    pub equation: Equation,
    pub name: &'static str,
    pub kind: EquationKind,
    pub max_norms: Vec<f64>,
    pub l2_norms: Vec<f64>,
    pub order: Order,
    pub monotone: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rung {
    pub m: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RungStatus {
    pub m: usize,
    pub dt: f64,
    pub ok: bool,
    pub error_kind: Option<&'static str>,
    pub message: Option<String>,
    pub triplets: usize,
    pub max_what_boundary: f64,
    pub max_utilde_boundary: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub rungs: Vec<RungStatus>,
    pub window_start: f64,
    pub residual_cap: f64,
    pub boundary_cap: f64,
    pub min_order: f64,
    pub equations: Vec<EquationReport>,
    pub pass: bool,
}

impl ResidualReport {
    pub fn equation(&self, eq: Equation) -> Option<&EquationReport> {
        self.equations.iter().find(|e| e.equation == eq)
    }

    /// Plain-text table, one line per equation.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let ms: Vec<String> = self.rungs.iter().map(|r| format!("M={}", r.m)).collect();
        out.push_str(&format!("{:<16} {:<12} {}  {:>8}  status\n", "equation", "kind", ms.iter().map(|m| format!("{m:>11}")).collect::<String>(), "order"));
        for e in &self.equations {
            let norms: String = e.max_norms.iter().map(|v| format!("{v:>11.3e}")).collect();
            let order = match e.order {
                Order::Exact => "exact".to_string(),
                Order::Fitted(p) => format!("{p:.2}"),
                Order::Undetermined => "-".to_string(),
            };
            let kind = match e.kind {
                EquationKind::Differential => "differential",
                EquationKind::Algebraic => "algebraic",
                EquationKind::Boundary => "boundary",
            };
            out.push_str(&format!(
                "{:<16} {:<12} {}  {:>8}  {}\n",
                e.name,
                kind,
                norms,
                order,
                if e.pass { "pass" } else { "FAIL" }
            ));
        }
        out
    }
}

/// Largest value of `D̂` on `[0, horizon]`, sampled finely.
pub fn schedule_max(schedule: &DelaySchedule, horizon: f64) -> f64 {
    let n = 4096;
    (0..=n)
        .map(|i| schedule.eval(horizon * i as f64 / n as f64).value)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// First time at which residuals may be sampled: `max D̂ + analysis_margin`,
/// pushed back until the window `[t − max D̂, t]` holds no kink of `U` of
/// order at most [`SMOOTHNESS_ORDER`].
pub fn analysis_window_start(config: &ScenarioConfig) -> Result<f64> {
    let schedule = config.delay_schedule()?;
    let dmax = schedule_max(&schedule, config.horizon);
    let last_kink = propagate_kinks(config.delay, &schedule, config.horizon, SMOOTHNESS_ORDER)
        .last()
        .map_or(0.0, |k| k.t);
    Ok((dmax + config.analysis_margin).max(last_kink + dmax))
}

/// Parses `"50,100,200"` or `"50:0.002,100:0.001"`. Without an explicit step,
/// `dt` scales with the grid so that `M·dt` matches the base config.
pub fn parse_ladder(spec: &str, base: &ScenarioConfig) -> Result<Vec<Rung>> {
    let rungs = spec
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let mut parts = item.trim().splitn(2, ':');
            let m: usize = parts
                .next()
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| Error::config("ladder", format!("cannot read grid size in `{item}`")))?;
            let dt = match parts.next() {
                Some(d) => d
                    .trim()
                    .parse()
                    .map_err(|_| Error::config("ladder", format!("cannot read step in `{item}`")))?,
                None => base.dt * base.grid as f64 / m as f64,
            };
            Ok(Rung { m, dt })
        })
        .collect::<Result<Vec<_>>>()?;
    check_ladder(&rungs)?;
    Ok(rungs)
}

fn check_ladder(rungs: &[Rung]) -> Result<()> {
    if rungs.len() < 3 {
        return Err(Error::config("ladder", format!("needs at least 3 rungs, got {}", rungs.len())));
    }
    for w in rungs.windows(2) {
        if w[1].m <= w[0].m || w[1].dt >= w[0].dt {
            return Err(Error::config("ladder", "rungs must refine both the grid and the step"));
        }
    }
    for r in rungs {
        if r.m < 8 || !(r.dt > 0.0) {
            return Err(Error::config("ladder", format!("invalid rung M = {}, dt = {}", r.m, r.dt)));
        }
    }
    Ok(())
}

/// The config of one rung: snapshot spacing in time is kept from the base.
pub fn rung_config(base: &ScenarioConfig, rung: Rung, window_start: f64) -> ScenarioConfig {
    let mut cfg = base.clone();
    let interval = base.stride as f64 * base.dt;
    cfg.grid = rung.m;
    cfg.dt = rung.dt;
    cfg.stride = ((interval / rung.dt).round() as usize).max(1);
    cfg.snapshot_start = cfg.snapshot_start.max(window_start);
    cfg
}

/// Residual norms of one rung, or the failure message.
fn run_rung(base: &ScenarioConfig, rung: Rung, window_start: f64) -> (RungStatus, Option<RunResiduals>) {
    let cfg = rung_config(base, rung, window_start);
    let status = |err: Option<&Error>, triplets, run: Option<&RunOutput>| RungStatus {
        m: rung.m,
        dt: rung.dt,
        ok: err.is_none(),
        error_kind: err.map(Error::kind),
        message: err.map(Error::to_string),
        triplets,
        max_what_boundary: run.map_or(f64::NAN, |r| r.max_what_boundary),
        max_utilde_boundary: run.map_or(f64::NAN, |r| r.max_utilde_boundary),
    };
    let setup = match cfg.plant_setup() {
        Ok(s) => s,
        Err(e) => return (status(Some(&e), 0, None), None),
    };
    match run_scenario(&cfg) {
        Ok(run) => match evaluate_run(setup.plant.as_ref(), setup.controller.as_ref(), &run, window_start) {
            Ok(res) => (status(None, res.triplets, Some(&run)), Some(res)),
            Err(e) => (status(Some(&e), 0, Some(&run)), None),
        },
        Err(fail) => (status(Some(&fail.error), 0, Some(&fail.partial)), None),
    }
}

/// Runs the scenario on every rung (in parallel), aggregates residuals and
/// fits orders against `1/M`.
///
/// An equation passes when its order is at least `min_order` (or the
/// residual is exact), its finest-rung max-norm is at most `residual_cap`,
/// and the max-norm decreases along the ladder within 20% slack. Boundary
/// identities pass when the finest rung is at most `boundary_cap`; the
/// algebraic ones when every rung is at the roundoff floor.
pub fn convergence_study(config: &ScenarioConfig, ladder: &[Rung]) -> Result<ResidualReport> {
    check_ladder(ladder)?;
    config.validate()?;
    let window_start = analysis_window_start(config)?;
    if window_start >= config.horizon {
        return Err(Error::config(
            "analysis_margin",
            format!("analysis window starts at {window_start}, after the horizon {}", config.horizon),
        ));
    }
    let results: Vec<_> = ladder.par_iter().map(|r| run_rung(config, *r, window_start)).collect();
    let rungs: Vec<RungStatus> = results.iter().map(|(s, _)| s.clone()).collect();
    let all_ok = rungs.iter().all(|r| r.ok);
    let residuals: Vec<RunResiduals> = results.into_iter().filter_map(|(_, r)| r).collect();

    let inv_m: Vec<f64> = residuals.iter().map(|r| r.m as f64).collect();
    let equations: Vec<EquationReport> = Equation::ALL
        .iter()
        .map(|&eq| {
            let max_norms: Vec<f64> = residuals.iter().map(|r| r.get(eq).max).collect();
            let l2_norms: Vec<f64> = residuals.iter().map(|r| r.get(eq).l2).collect();
            let order = if max_norms.len() < 3 {
                Order::Undetermined
            } else if max_norms.iter().all(|v| *v <= ROUNDOFF_FLOOR) {
                Order::Exact
            } else if max_norms.contains(&0.0) {
                Order::Undetermined
            } else {
                Order::Fitted(-fit_order(&inv_m, &max_norms))
            };
            let monotone = max_norms.windows(2).all(|w| w[1] <= w[0] * MONOTONE_SLACK);
            let finest = max_norms.last().copied().unwrap_or(f64::INFINITY);
            let pass = all_ok
                && match eq.kind() {
                    EquationKind::Algebraic => max_norms.iter().all(|v| *v <= ROUNDOFF_FLOOR),
                    EquationKind::Boundary => finest <= config.boundary_cap,
                    EquationKind::Differential => {
                        let order_ok = match order {
                            Order::Exact => true,
                            Order::Fitted(p) => p >= config.min_order,
                            Order::Undetermined => false,
                        };
                        order_ok && monotone && finest <= config.residual_cap
                    }
                };
            EquationReport {
                equation: eq,
                name: eq.name(),
                kind: eq.kind(),
                max_norms,
                l2_norms,
                order,
                monotone,
                pass,
            }
        })
        .collect();
    let pass = all_ok && equations.iter().all(|e| e.pass);
    Ok(ResidualReport {
        rungs,
        window_start,
        residual_cap: config.residual_cap,
        boundary_cap: config.boundary_cap,
        min_order: config.min_order,
        equations,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [50.0, 100.0, 200.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-2.0)).collect();
        assert!((fit_order(&x, &y) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn ladder_parsing() {
        let base = ScenarioConfig::new("linear", &[1.0], 0.5);
        let r = parse_ladder("50,100,200", &base).unwrap();
        assert_eq!(r.len(), 3);
        assert!((r[2].dt - 5e-4).abs() < 1e-15);
        let r = parse_ladder("10:0.01, 20:0.005, 40:0.0025", &base).unwrap();
        assert_eq!(r[1].m, 20);
        assert!(matches!(parse_ladder("50", &base), Err(Error::Config { .. })));
        assert!(parse_ladder("100,50,200", &base).is_err());
    }
}
