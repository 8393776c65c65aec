mod common;

use common::*;
use predictor_backstepping::config::{ScenarioConfig, ScheduleName};
use predictor_backstepping::residual::{residual_utilde_system, residual_w_system};

fn exact(plant: &str, x0: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(plant, &[x0], 0.5);
    cfg.grid = 40;
    cfg.dt = 0.005;
    cfg.horizon = 20.0;
    cfg.stride = 400;
    cfg
}

#[test]
fn exact_delay_runs_settle_by_t20() {
    for plant in ["linear", "cubic"] {
        for x0 in [-2.0, -1.0, 0.5, 2.0] {
            let run = run_ok(&exact(plant, x0));
            assert!(final_abs(&run) <= 1e-3, "{plant} from {x0}: {:e}", final_abs(&run));
        }
    }
}

#[test]
fn step_halving_converges_at_fourth_order() {
    for plant in ["linear", "cubic"] {
        let mut cfg = exact(plant, 1.5);
        cfg.horizon = 5.0;
        cfg.dt = 0.01;
        let factor = halving_factor(&cfg);
        assert!(factor >= 8.0, "{plant}: {factor:.2}");
    }
}

#[test]
fn equilibrium_stays_at_rest() {
    for plant in ["linear", "cubic"] {
        let mut cfg = exact(plant, 0.0);
        cfg.horizon = 3.0;
        cfg.schedule = ScheduleName::Sinusoid;
        cfg.schedule_amplitude = 0.1;
        let run = run_ok(&cfg);
        assert!(run.trajectory.controls.iter().all(|u| *u == 0.0));
        assert!(run.triplets.iter().all(|t| t.center.what.max_abs() == 0.0));
    }
}

#[test]
fn exact_estimate_has_no_estimation_error() {
    let mut cfg = exact("cubic", 1.0);
    cfg.horizon = 3.0;
    cfg.stride = 50;
    let run = run_ok(&cfg);
    assert!(!run.triplets.is_empty());
    for tr in &run.triplets {
        assert_eq!(tr.center.utilde.max_abs(), 0.0);
        let (r, _) = residual_utilde_system(tr).unwrap();
        assert_eq!(r.max_abs(), 0.0);
        assert!(tr.center.kernels.first.f_utilde.amax() == 0.0);
    }
}

#[test]
fn boundary_values_vanish_in_every_scenario() {
    let schedules = [
        (ScheduleName::Constant, 0.6, 0.0, 0.0),
        (ScheduleName::Ramp, 0.4, 0.05, 0.0),
        (ScheduleName::Sinusoid, 0.5, 0.0, 0.15),
    ];
    for plant in ["integrator", "linear", "cubic", "double_integrator"] {
        for (kind, base, slope, amplitude) in schedules {
            let mut cfg = sinusoid_for(plant);
            cfg.schedule = kind;
            cfg.schedule_base = Some(base);
            cfg.schedule_slope = slope;
            cfg.schedule_amplitude = amplitude;
            cfg.horizon = 3.0;
            cfg.stride = 25;
            let run = run_ok(&cfg);
            assert!(run.triplets.len() > 10);
            assert!(run.max_what_boundary <= 1e-12, "{plant} {kind:?}: {:e}", run.max_what_boundary);
            assert!(run.max_utilde_boundary <= 1e-12, "{plant} {kind:?}: {:e}", run.max_utilde_boundary);
            for tr in &run.triplets {
                assert!(residual_w_system(tr).unwrap().1 <= 1e-12);
            }
        }
    }
}

#[test]
fn blow_up_keeps_the_partial_trajectory() {
    let mut cfg = ScenarioConfig::new("linear", &[1.0], 0.5);
    cfg.a = 3.0;
    cfg.gain = -1.0;
    cfg.blowup_threshold = 1e3;
    cfg.dt = 0.01;
    cfg.grid = 20;
    let fail = predictor_backstepping::sim::run_scenario(&cfg).unwrap_err();
    assert_eq!(fail.error.kind(), "blow_up");
    let last = fail.partial.trajectory.times.last().copied().unwrap();
    assert!(last > 0.0 && last < cfg.horizon);
}
