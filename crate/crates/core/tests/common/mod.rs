#![allow(dead_code)]

use predictor_backstepping::backstepping::{forward_transform, inverse_transform};
use predictor_backstepping::config::{ScenarioConfig, ScheduleName};
use predictor_backstepping::plant::{builtin, PlantParams, State};
use predictor_backstepping::profile::{derivative, GridProfile};
use predictor_backstepping::residual::{analysis_window_start, fit_order};
use predictor_backstepping::sim::{run_scenario, RunOutput, Snapshot, Triplet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Linear plant `Ẋ = X + U`, `κ = −2X`, `D = 0.5`, `D̂ = 0.5 + 0.1 sin t`.
pub fn linear_sinusoid() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new("linear", &[1.0], 0.5);
    cfg.schedule = ScheduleName::Sinusoid;
    cfg.schedule_amplitude = 0.1;
    cfg.d_lower = 0.1;
    cfg.d_upper = 1.5;
    cfg.horizon = 6.0;
    cfg.grid = 50;
    cfg.dt = 0.002;
    cfg.stride = 50;
    cfg
}

pub fn x0_for(plant: &str) -> Vec<f64> {
    match plant {
        "double_integrator" => vec![1.0, 0.0],
        _ => vec![1.0],
    }
}

pub fn sinusoid_for(plant: &str) -> ScenarioConfig {
    let mut cfg = linear_sinusoid();
    cfg.plant = plant.into();
    cfg.x0 = x0_for(plant);
    cfg
}

/// Runs `cfg` so that exactly one triplet is centred at the first stride
/// multiple after `t`, and returns it.
pub fn triplet_near(mut cfg: ScenarioConfig, t: f64) -> Triplet {
    let k = (t / cfg.dt).ceil() as usize;
    cfg.stride = k;
    cfg.snapshot_start = k as f64 * cfg.dt - 0.5 * cfg.dt;
    cfg.horizon = (k + cfg.triplet_span + 1) as f64 * cfg.dt;
    cfg.write_snapshots = false;
    let run = run_scenario(&cfg).unwrap_or_else(|f| panic!("{}", f.error));
    run.triplets.into_iter().next().expect("one triplet")
}

/// First time at which every field of `cfg` is smooth in `x`.
pub fn smooth_time(cfg: &ScenarioConfig) -> f64 {
    let mut long = cfg.clone();
    long.horizon = 20.0;
    analysis_window_start(&long).unwrap() + 0.05
}

pub fn max_diff(a: &GridProfile, b: &GridProfile) -> f64 {
    max_diff_inside(a, b, 0)
}

/// Max nodewise distance, skipping `skip` nodes at each end.
pub fn max_diff_inside(a: &GridProfile, b: &GridProfile, skip: usize) -> f64 {
    let r = a.arity();
    let (lo, hi) = (skip * r, (a.len() - skip) * r);
    a.values()[lo..hi]
        .iter()
        .zip(&b.values()[lo..hi])
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `max |∂ₓ(base) − analytic|` for the six pairs `(p1, p3)`, `(p2, p4)`,
/// `(q1, q3)`, `(q2, q4)`, `(q3, q5)`, `(q4, q6)`, with `∂ₓ` by finite
/// differences, skipping `skip` nodes at each end.
pub fn kernel_pair_errors(s: &Snapshot, skip: usize) -> Vec<(&'static str, f64)> {
    let f = &s.kernels.first;
    let d = &s.kernels.derivative;
    let e = |a: &GridProfile, b: &GridProfile| max_diff_inside(&derivative(a, 1), b, skip);
    vec![
        ("p3 = dp1/dx", e(&f.p1, &d.p3)),
        ("p4 = dp2/dx", e(&f.p2, &d.p4)),
        ("q3 = dq1/dx", e(&f.q1, &d.q3)),
        ("q4 = dq2/dx", e(&f.q2, &d.q4)),
        ("q5 = dq3/dx", e(&d.q3, &d.q5)),
        ("q6 = dq4/dx", e(&d.q4, &d.q6)),
    ]
}

pub const RATE_NAMES: [&str; 5] = ["uhat_t", "uhat_xt", "phat_t", "q1_t", "q7"];

fn central(tr: &Triplet, g: impl Fn(&Snapshot) -> GridProfile) -> GridProfile {
    g(&tr.after).combine(0.5 / tr.delta, &g(&tr.before), -0.5 / tr.delta).unwrap()
}

fn boundary_flux(s: &Snapshot) -> f64 {
    let m = s.m();
    let f = &s.kernels.first;
    -s.estimate.rate * f.q1.at(m) + f.q2.vector(m).dot(&f.f_utilde)
}

/// Distance between each analytic rate at the triplet centre and the central
/// difference of its base quantity.
pub fn rate_errors(tr: &Triplet) -> [f64; 5] {
    let c = &tr.center;
    let r = &c.kernels.rates;
    let m = c.m();
    let uhat_t = central(tr, |s| s.uhat.clone());
    let uhat_xt = central(tr, |s| derivative(&s.uhat, 1));
    let phat_t = central(tr, |s| s.phat.clone());
    let q1_t = (tr.after.kernels.first.q1.at(m) - tr.before.kernels.first.q1.at(m)) / (2.0 * tr.delta);
    let q7 = (boundary_flux(&tr.after) - boundary_flux(&tr.before)) / (2.0 * tr.delta);
    [
        max_diff(&uhat_t, &r.uhat_t),
        max_diff(&uhat_xt, &r.uhat_xt),
        max_diff(&phat_t, &r.phat_t),
        (q1_t - c.kernels.q1_t).abs(),
        (q7 - c.kernels.q7).abs(),
    ]
}

/// Rate errors at triplet spans `spans` around `t`, and the order fitted
/// against `δ` for each rate.
pub fn rate_study(cfg: &ScenarioConfig, t: f64, spans: &[usize]) -> Vec<(&'static str, Vec<f64>, f64)> {
    let runs: Vec<(f64, [f64; 5])> = spans
        .iter()
        .map(|&s| {
            let mut c = cfg.clone();
            c.triplet_span = s;
            let tr = triplet_near(c, t);
            (tr.delta, rate_errors(&tr))
        })
        .collect();
    let deltas: Vec<f64> = runs.iter().map(|r| r.0).collect();
    RATE_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let errs: Vec<f64> = runs.iter().map(|r| r.1[k]).collect();
            (*name, errs.clone(), fit_order(&deltas, &errs))
        })
        .collect()
}

/// Largest `‖forward(inverse(ŵ)) − ŵ‖∞` over `trials` random smooth profiles
/// with `‖ŵ‖∞ ≤ 1`, random states and random estimates.
pub fn round_trip_error(plant: &str, m: usize, trials: usize, seed: u64) -> f64 {
    let setup = builtin(plant, PlantParams::default()).unwrap();
    let n = setup.plant.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let what = random_profile(&mut rng, m);
        let x = State::from_iterator(n, (0..n).map(|_| rng.random_range(-1.0..1.0)));
        let dhat = rng.random_range(0.1..1.0);
        let (uhat, phat) = inverse_transform(setup.plant.as_ref(), setup.controller.as_ref(), &x, &what, dhat).unwrap();
        let back = forward_transform(setup.controller.as_ref(), &uhat, &phat).unwrap();
        worst = worst.max(max_diff(&back, &what));
    }
    worst
}

/// A few random Fourier modes plus noise, scaled into `[-1, 1]`.
pub fn random_profile(rng: &mut ChaCha8Rng, m: usize) -> GridProfile {
    let modes: Vec<(f64, f64, f64)> = (0..4)
        .map(|k| (rng.random_range(-1.0..1.0), (k + 1) as f64 * std::f64::consts::PI, rng.random_range(0.0..6.3)))
        .collect();
    let raw: Vec<f64> = (0..=m)
        .map(|i| {
            let x = i as f64 / m as f64;
            modes.iter().map(|(a, w, p)| a * (w * x + p).sin()).sum::<f64>() + rng.random_range(-0.1..0.1)
        })
        .collect();
    let peak = raw.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
    let scale = rng.random_range(0.0..1.0) / peak;
    GridProfile::scalar(m, raw.into_iter().map(|v| v * scale).collect()).unwrap()
}

pub fn run_ok(cfg: &ScenarioConfig) -> RunOutput {
    run_scenario(cfg).unwrap_or_else(|f| panic!("{}", f.error))
}

/// `|X(T)|∞` of a run.
pub fn final_abs(run: &RunOutput) -> f64 {
    run.final_state().unwrap().iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// `max |X_Δt − X_Δt/2| / max |X_Δt/2 − X_Δt/4|` over the times shared by the
/// three runs, starting from `cfg.dt`.
pub fn halving_factor(cfg: &ScenarioConfig) -> f64 {
    let runs: Vec<RunOutput> = (0..3)
        .map(|k| {
            let mut c = cfg.clone();
            c.dt = cfg.dt / f64::powi(2.0, k);
            c.write_snapshots = false;
            c.snapshot_start = c.horizon + 1.0;
            run_ok(&c)
        })
        .collect();
    let gap = |a: &RunOutput, b: &RunOutput, step: usize| {
        a.trajectory
            .states
            .iter()
            .enumerate()
            .map(|(k, x)| {
                let y = &b.trajectory.states[k * step];
                x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    };
    gap(&runs[0], &runs[1], 2) / gap(&runs[1], &runs[2], 2)
}
