//! One line per acceptance criterion; exits non-zero if any fails.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::*;
use predictor_backstepping::config::ScenarioConfig;
use predictor_backstepping::plant::BUILTIN_PLANTS;
use predictor_backstepping::residual::{
    convergence_study, parse_ladder, residual_w_system, Equation, EquationReport, Order, ResidualReport,
};
use tempfile::TempDir;

struct Outcome {
    pass: bool,
    detail: String,
}

fn order_ok(e: &EquationReport, min: f64) -> bool {
    match e.order {
        Order::Exact => true,
        Order::Fitted(v) => v >= min,
        Order::Undetermined => false,
    }
}

fn order_text(e: &EquationReport) -> String {
    match e.order {
        Order::Exact => "exact".into(),
        Order::Fitted(v) => format!("{v:.2}"),
        Order::Undetermined => "n/a".into(),
    }
}

fn finest(e: &EquationReport) -> f64 {
    *e.max_norms.last().unwrap_or(&f64::NAN)
}

fn lemma_one(report: &ResidualReport, secs: f64) -> Outcome {
    let eqs = [
        Equation::What,
        Equation::Utilde,
        Equation::TransportUhat,
        Equation::TransportPhat,
        Equation::State,
    ];
    let mut pass = secs <= 120.0;
    let mut parts = Vec::new();
    for eq in eqs {
        let e = report.equation(eq).unwrap();
        pass &= order_ok(e, 1.7) && finest(e) <= 1e-3;
        parts.push(format!("{} p={} max={:.1e}", e.name, order_text(e), finest(e)));
    }
    Outcome { pass, detail: format!("{} ({secs:.0}s)", parts.join(", ")) }
}

fn lemma_two(report: &ResidualReport, secs: f64) -> Outcome {
    let mut pass = secs <= 180.0;
    let mut parts = Vec::new();
    for eq in [Equation::UtildeX, Equation::WhatX, Equation::WhatXx] {
        let e = report.equation(eq).unwrap();
        pass &= order_ok(e, 1.7);
        parts.push(format!("{} p={}", e.name, order_text(e)));
    }
    for eq in [Equation::BoundaryUtildeX, Equation::BoundaryWhatX, Equation::BoundaryWhatXx] {
        let e = report.equation(eq).unwrap();
        pass &= finest(e) <= 1e-6;
        parts.push(format!("{} {:.1e}", e.name, finest(e)));
    }
    Outcome { pass, detail: format!("{} ({secs:.0}s)", parts.join(", ")) }
}

fn boundary_exactness(report: &ResidualReport) -> Outcome {
    let mut worst: f64 = report
        .rungs
        .iter()
        .map(|r| r.max_what_boundary.max(r.max_utilde_boundary))
        .fold(0.0, f64::max);
    let mut scenarios = report.rungs.len();
    for plant in BUILTIN_PLANTS {
        for amplitude in [0.0, 0.1] {
            for delay in [0.4, 0.6] {
                let mut cfg = sinusoid_for(plant);
                cfg.schedule_amplitude = amplitude;
                cfg.delay = delay;
                cfg.horizon = 3.0;
                cfg.stride = 10;
                let run = run_ok(&cfg);
                worst = worst.max(run.max_what_boundary).max(run.max_utilde_boundary);
                for tr in &run.triplets {
                    for s in [&tr.before, &tr.center, &tr.after] {
                        worst = worst.max(s.what.at(s.m()).abs()).max(s.utilde.at(s.m()).abs());
                    }
                }
                scenarios += 1;
            }
        }
    }
    Outcome {
        pass: worst <= 1e-12,
        detail: format!("max |w(1)|, |u~(1)| = {worst:.1e} over {scenarios} scenarios"),
    }
}

fn exact_delay() -> Outcome {
    let mut utilde: f64 = 0.0;
    let mut gap: f64 = 0.0;
    let mut count = 0;
    for plant in ["linear", "cubic"] {
        let mut cfg = ScenarioConfig::new(plant, &[1.0], 0.5);
        cfg.grid = 50;
        cfg.dt = 0.002;
        cfg.horizon = 4.0;
        cfg.stride = 25;
        let run = run_ok(&cfg);
        for tr in &run.triplets {
            let c = &tr.center;
            utilde = utilde.max(c.utilde.max_abs());
            let (r, _) = residual_w_system(tr).unwrap();
            let wt = tr.after.what.combine(0.5 / tr.delta, &tr.before.what, -0.5 / tr.delta).unwrap();
            let transport = wt.combine(c.true_delay, &c.what_x, -1.0).unwrap();
            gap = gap.max(max_diff(&r, &transport));
            count += 1;
        }
    }
    Outcome {
        pass: utilde <= 1e-12 && gap <= 1e-12 && count > 0,
        detail: format!("max |u~| = {utilde:.1e}, |w residual - transport residual| = {gap:.1e} over {count} triplets"),
    }
}

fn kernel_pairs() -> Outcome {
    let start = Instant::now();
    let bound = 50.0 / 200f64.powi(2);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for plant in ["linear", "cubic", "double_integrator"] {
        let mut cfg = sinusoid_for(plant);
        cfg.grid = 200;
        cfg.dt = 0.0005;
        let t = smooth_time(&cfg);
        let tr = triplet_near(cfg, t);
        let e = kernel_pair_errors(&tr.center, 0).iter().map(|p| p.1).fold(0.0, f64::max);
        worst = worst.max(e);
        parts.push(format!("{plant} {e:.1e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: worst <= bound && secs <= 60.0,
        detail: format!("{} (bound {bound:.2e}, {secs:.0}s)", parts.join(", ")),
    }
}

fn time_derivatives() -> Outcome {
    let mut cfg = linear_sinusoid();
    cfg.grid = 100;
    cfg.dt = 1e-3;
    let t = smooth_time(&cfg);
    let study = rate_study(&cfg, t, &[40, 20, 10]);
    let pass = study.iter().all(|(_, _, p)| *p >= 1.7);
    let parts: Vec<String> = study.iter().map(|(n, _, p)| format!("{n} p={p:.2}")).collect();
    Outcome { pass, detail: format!("{} (delta = 0.04, 0.02, 0.01)", parts.join(", ")) }
}

fn round_trip() -> Outcome {
    let errs: Vec<(&str, f64)> = BUILTIN_PLANTS
        .iter()
        .enumerate()
        .map(|(k, p)| (*p, round_trip_error(p, 200, 100, 2024 + k as u64)))
        .collect();
    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    Outcome {
        pass: worst <= 1e-8,
        detail: format!("max error {worst:.1e} over 100 profiles x {} plants", errs.len()),
    }
}

fn closed_loop() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut factors = Vec::new();
    for plant in ["linear", "cubic"] {
        for x0 in [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0] {
            let mut cfg = ScenarioConfig::new(plant, &[x0], 0.5);
            cfg.grid = 40;
            cfg.dt = 0.005;
            cfg.horizon = 20.0;
            cfg.write_snapshots = false;
            cfg.snapshot_start = 21.0;
            worst = worst.max(final_abs(&run_ok(&cfg)));
        }
        let mut cfg = ScenarioConfig::new(plant, &[2.0], 0.5);
        cfg.grid = 40;
        cfg.dt = 0.01;
        cfg.horizon = 5.0;
        factors.push((plant, halving_factor(&cfg)));
    }
    let pass = worst <= 1e-3 && factors.iter().all(|f| f.1 >= 8.0);
    let f: Vec<String> = factors.iter().map(|(p, v)| format!("{p} {v:.1}")).collect();
    Outcome { pass, detail: format!("max |X(20)| = {worst:.1e}; halving factors {}", f.join(", ")) }
}

const PLUMBING: &str = r#"
plant = "linear"
x0 = [1.0]
delay = 0.5
schedule = "sinusoid"
schedule_amplitude = 0.1
d_lower = 0.1
d_upper = 1.5
grid = 20
dt = 0.01
horizon = 4.0
stride = 50
"#;

fn pbk(args: &[&str]) -> Option<i32> {
    Command::new(env!("CARGO_BIN_EXE_pbk"))
        .args(args)
        .env_remove("PBK_OUT")
        .output()
        .ok()
        .and_then(|o| o.status.code())
}

fn simulate_case(root: &Path, name: &str, text: &str) -> Option<i32> {
    let cfg = root.join(format!("{name}.toml"));
    fs::write(&cfg, text).unwrap();
    let out = root.join(name);
    pbk(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn plumbing() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    let first = simulate_case(root, "a", PLUMBING);
    let second = simulate_case(root, "b", PLUMBING);
    let (a, b) = (csv_files(&root.join("a")), csv_files(&root.join("b")));
    let identical = first == Some(0) && second == Some(0) && a.len() > 2 && a == b;

    fs::write(root.join("blocker"), "").unwrap();
    let verify_cfg = root.join("strict.toml");
    fs::write(&verify_cfg, format!("{PLUMBING}min_order = 3.0\n")).unwrap();
    let verify_out = root.join("strict");
    let cases = [
        ("ok", 0, simulate_case(root, "ok", PLUMBING)),
        ("dt<=0", 2, simulate_case(root, "dt", &PLUMBING.replace("dt = 0.01", "dt = 0.0"))),
        (
            "blow-up",
            3,
            simulate_case(root, "blow", &PLUMBING.replace("delay = 0.5", "delay = 0.5\na = 3.0\ngain = -1.0\nblowup_threshold = 1e3")),
        ),
        ("numeric", 4, simulate_case(root, "numeric", &PLUMBING.replace("delay = 0.5", "delay = 0.5\nb = 1000.0"))),
        (
            "io",
            1,
            pbk(&[
                "simulate",
                "--config",
                root.join("ok.toml").to_str().unwrap(),
                "--out",
                root.join("blocker/out").to_str().unwrap(),
            ]),
        ),
        (
            "verify",
            5,
            pbk(&[
                "verify",
                "--config",
                verify_cfg.to_str().unwrap(),
                "--ladder",
                "20,40,80",
                "--out",
                verify_out.to_str().unwrap(),
            ]),
        ),
    ];
    let codes_ok = cases.iter().all(|(_, want, got)| *got == Some(*want));
    let codes: Vec<String> = cases.iter().map(|(n, _, got)| format!("{n}={}", got.unwrap_or(-1))).collect();
    Outcome {
        pass: identical && codes_ok,
        detail: format!("{} CSVs bit-identical: {identical}; exit codes {}", a.len(), codes.join(" ")),
    }
}

fn main() {
    let mut failed = 0;
    let mut report = |id: u32, name: &str, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {id} {name}: {}", o.detail);
        if !o.pass {
            failed += 1;
        }
    };

    let cfg = linear_sinusoid();
    let start = Instant::now();
    let study = convergence_study(&cfg, &parse_ladder("50,100,200", &cfg).unwrap()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    report(1, "first-order residual certification", lemma_one(&study, secs));
    report(2, "derivative residual certification", lemma_two(&study, secs));
    report(3, "boundary exactness", boundary_exactness(&study));
    report(4, "exact-delay degeneracy", exact_delay());
    report(5, "kernel pair identities", kernel_pairs());
    report(6, "analytic time-derivative cross-checks", time_derivatives());
    report(7, "transformation round trip", round_trip());
    report(8, "closed-loop sanity", closed_loop());
    report(9, "plumbing determinism and exit codes", plumbing());

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
