//! Closed-loop simulation of `Ẋ = f(X, U(t − D))` under the predictor
//! feedback `U(t) = κ(p̂(1, t))`.
//!
//! The state advances with classical fourth-order steps. The control sample
//! rate equals the step, and `U` between samples is read from the history by
//! cubic interpolation. Because `p̂(1, t)` depends on `U(t)` itself (through
//! the last history interval), each new sample is found by fixed-point
//! iteration, which makes `ŵ(1, t) = 0` hold to roundoff.

use std::collections::VecDeque;

use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::history::{distributed_input, propagate_kinks, ControlHistory, DelayEstimate, DelaySchedule, Side};
use crate::kernels::{eval_kernels, KernelFields, KernelSet};
use crate::plant::{Controller, PlantModel, State};
use crate::predictor::{compute_transition_field, march_predictor, TransitionField};
use crate::profile::{derivative, GridProfile};

const FIXED_POINT_TOL: f64 = 1e-15;
const FIXED_POINT_MAX_ITER: usize = 60;

/// Kinks of `U` up to this derivative order are resolved exactly by the
/// step splitting and one-sided interpolation.
pub const KINK_ORDER: usize = 4;

/// Everything known about the closed loop at one time node.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub step: usize,
    pub state: State,
    pub control: f64,
    pub estimate: DelayEstimate,
    pub true_delay: f64,
    pub u: GridProfile,
    pub uhat: GridProfile,
    pub utilde: GridProfile,
    pub phat: GridProfile,
    pub what: GridProfile,
    pub what_x: GridProfile,
    pub what_xx: GridProfile,
    pub what_xxx: GridProfile,
    pub transition: TransitionField,
    pub kernels: KernelSet,
}

impl Snapshot {
    pub fn m(&self) -> usize {
        self.what.m()
    }

    /// `D̃ = D − D̂`.
    pub fn mismatch(&self) -> f64 {
        self.true_delay - self.estimate.value
    }

    pub fn kernel_fields(&self) -> KernelFields<'_> {
        let utilde_x = derivative(&self.utilde, 1);
        KernelFields {
            state: &self.state,
            phat: &self.phat,
            what: &self.what,
            what_x: &self.what_x,
            what_xx: &self.what_xx,
            what_xxx: &self.what_xxx,
            transition: &self.transition,
            true_delay: self.true_delay,
            estimate: self.estimate,
            u0: self.u.at(0),
            utilde_x0: utilde_x.at(0),
        }
    }
}

/// Snapshots at `t − δ`, `t`, `t + δ`.
#[derive(Debug, Clone)]
pub struct Triplet {
    pub before: Snapshot,
    pub center: Snapshot,
    pub after: Snapshot,
    pub delta: f64,
}

/// One row per time step.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<f64>,
    pub estimates: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub triplets: Vec<Triplet>,
    /// `max |ŵ(1, t)|` over every step.
    pub max_what_boundary: f64,
    /// `max |ũ(1, t)|` over every step.
    pub max_utilde_boundary: f64,
    /// Largest `D̂(t)` over the run.
    pub max_estimate: f64,
}

/// A failed run keeps what was computed before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub partial: RunOutput,
}

/// Fields computed at every step; full snapshots are assembled from these.
#[derive(Debug, Clone)]
struct StepRecord {
    step: usize,
    t: f64,
    state: State,
    control: f64,
    estimate: DelayEstimate,
    u: GridProfile,
    uhat: GridProfile,
    phat: GridProfile,
}

pub struct Simulator<'a> {
    model: &'a dyn PlantModel,
    controller: &'a dyn Controller,
    schedule: DelaySchedule,
    delay: f64,
    m: usize,
    dt: f64,
    blowup: f64,
}

impl<'a> Simulator<'a> {
    pub fn new(
        model: &'a dyn PlantModel,
        controller: &'a dyn Controller,
        schedule: DelaySchedule,
        delay: f64,
        m: usize,
        dt: f64,
    ) -> Self {
        Self { model, controller, schedule, delay, m, dt, blowup: 1e6 }
    }

    pub fn with_blowup_threshold(mut self, threshold: f64) -> Self {
        self.blowup = threshold;
        self
    }

    fn predictor(&self, history: &ControlHistory, x: &State, t: f64, dhat: f64) -> Result<GridProfile> {
        // û(x) = U(t + D̂(x − 1)) jumps where the argument crosses zero and
        // kinks wherever it crosses a kink of U
        let breaks: Vec<f64> = std::iter::once(0.0)
            .chain(history.kinks().iter().copied())
            .map(|k| 1.0 + (k - t) / dhat)
            .filter(|c| *c > 0.0 && *c < 1.0)
            .collect();
        let breaks = &breaks[..];
        march_predictor(
            self.model,
            x,
            dhat,
            self.m,
            |s, side| history.sample_side(t + dhat * (s - 1.0), side).unwrap_or(f64::NAN),
            breaks,
        )
    }

    /// Solves `U = κ(p̂(1, t; U))` for the sample at the newest node.
    fn close_loop(&self, history: &mut ControlHistory, x: &State, t: f64, dhat: f64) -> Result<(f64, GridProfile)> {
        let guess = history.last().unwrap_or(0.0);
        history.push(guess);
        let mut u = guess;
        let mut converged = false;
        let mut change = f64::INFINITY;
        for _ in 0..FIXED_POINT_MAX_ITER {
            let phat = self.predictor(history, x, t, dhat)?;
            let next = self.controller.kappa(&phat.vector(self.m));
            if !next.is_finite() {
                return Err(self.blow_up(t, x, "control is not finite"));
            }
            change = (next - u).abs();
            u = next;
            history.set_last(u);
            if change <= FIXED_POINT_TOL * (1.0 + u.abs()) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence { t, change });
        }
        let phat = self.predictor(history, x, t, dhat)?;
        Ok((u, phat))
    }

    fn blow_up(&self, t: f64, x: &State, reason: &str) -> Error {
        Error::BlowUp { t, state: x.iter().copied().collect(), reason: reason.into() }
    }

    /// RK4 step of `Ẋ = f(X, U(t − D))`, split where the delayed input
    /// switches on.
    fn advance(&self, history: &ControlHistory, x: &State, t: f64) -> Result<State> {
        let input = |s: f64, side: Side| history.sample_side(s - self.delay, side);
        let rk4 = |a: f64, b: f64, x: &State| -> Result<State> {
            let h = b - a;
            let k1 = self.model.f(x, input(a, Side::Right)?);
            let k2 = self.model.f(&(x + &k1 * (0.5 * h)), input(a + 0.5 * h, Side::Right)?);
            let k3 = self.model.f(&(x + &k2 * (0.5 * h)), input(a + 0.5 * h, Side::Right)?);
            let k4 = self.model.f(&(x + &k3 * h), input(b, Side::Left)?);
            Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
        };
        let b = t + self.dt;
        let cuts = std::iter::once(0.0)
            .chain(history.kinks().iter().copied())
            .map(|k| k + self.delay)
            .filter(|c| *c > t + 1e-12 && *c < b - 1e-12);
        let mut x = x.clone();
        let mut start = t;
        for c in cuts.chain(std::iter::once(b)) {
            x = rk4(start, c, &x)?;
            start = c;
        }
        Ok(x)
    }

    fn record(&self, history: &mut ControlHistory, step: usize, x: &State) -> Result<StepRecord> {
        let t = step as f64 * self.dt;
        let estimate = self.schedule.eval(t);
        let (control, phat) = self.close_loop(history, x, t, estimate.value)?;
        let u = distributed_input(history, t, self.delay, self.m)?;
        let uhat = distributed_input(history, t, estimate.value, self.m)?;
        Ok(StepRecord { step, t, state: x.clone(), control, estimate, u, uhat, phat })
    }

    fn snapshot(&self, r: &StepRecord) -> Result<Snapshot> {
        let what = GridProfile::scalar(
            self.m,
            (0..=self.m)
                .map(|i| r.uhat.at(i) - self.controller.kappa(&r.phat.vector(i)))
                .collect(),
        )?;
        let utilde = r.u.sub(&r.uhat)?;
        let transition = compute_transition_field(self.model, &r.phat, &r.uhat, r.estimate.value)?;
        let (what_x, what_xx, what_xxx) = (derivative(&what, 1), derivative(&what, 2), derivative(&what, 3));
        let fields = KernelFields {
            state: &r.state,
            phat: &r.phat,
            what: &what,
            what_x: &what_x,
            what_xx: &what_xx,
            what_xxx: &what_xxx,
            transition: &transition,
            true_delay: self.delay,
            estimate: r.estimate,
            u0: r.u.at(0),
            utilde_x0: derivative(&utilde, 1).at(0),
        };
        let kernels = eval_kernels(self.model, self.controller, &fields)?;
        Ok(Snapshot {
            t: r.t,
            step: r.step,
            state: r.state.clone(),
            control: r.control,
            estimate: r.estimate,
            true_delay: self.delay,
            u: r.u.clone(),
            uhat: r.uhat.clone(),
            utilde,
            phat: r.phat.clone(),
            what,
            what_x,
            what_xx,
            what_xxx,
            transition,
            kernels,
        })
    }

    /// Runs `steps` steps from `x0` with zero pre-history. Snapshot triplets
    /// are assembled around every `stride`-th step at or after
    /// `snapshot_start`, with members `span` steps apart.
    pub fn run(
        &self,
        x0: &State,
        steps: usize,
        stride: usize,
        span: usize,
        snapshot_start: f64,
    ) -> Result<RunOutput, Box<RunFailure>> {
        let mut out = RunOutput {
            trajectory: Trajectory::default(),
            triplets: Vec::new(),
            max_what_boundary: 0.0,
            max_utilde_boundary: 0.0,
            max_estimate: 0.0,
        };
        match self.run_into(&mut out, x0, steps, stride, span, snapshot_start) {
            Ok(()) => Ok(out),
            Err(error) => Err(Box::new(RunFailure { error, partial: out })),
        }
    }

    fn run_into(
        &self,
        out: &mut RunOutput,
        x0: &State,
        steps: usize,
        stride: usize,
        span: usize,
        snapshot_start: f64,
    ) -> Result<()> {
        if x0.len() != self.model.dim() {
            return Err(Error::DimensionMismatch { expected: self.model.dim(), got: x0.len() });
        }
        let retain = self.delay.max(self.schedule.bounds.upper) + 8.0 * self.dt;
        let mut history = ControlHistory::new(self.dt, retain)?;
        let horizon = steps as f64 * self.dt;
        history.set_kinks(
            propagate_kinks(self.delay, &self.schedule, horizon, KINK_ORDER)
                .into_iter()
                .filter(|k| k.order > 0)
                .map(|k| k.t)
                .collect(),
        );
        let mut window: VecDeque<StepRecord> = VecDeque::with_capacity(2 * span + 2);
        let mut x = x0.clone();
        for step in 0..=steps {
            let rec = self.record(&mut history, step, &x)?;
            let t = rec.t;
            let what1 = rec.control - self.controller.kappa(&rec.phat.vector(self.m));
            let utilde1 = rec.u.at(self.m) - rec.uhat.at(self.m);
            out.max_what_boundary = out.max_what_boundary.max(what1.abs());
            out.max_utilde_boundary = out.max_utilde_boundary.max(utilde1.abs());
            out.max_estimate = out.max_estimate.max(rec.estimate.value);
            out.trajectory.times.push(t);
            out.trajectory.states.push(x.iter().copied().collect());
            out.trajectory.controls.push(rec.control);
            out.trajectory.estimates.push(rec.estimate.value);

            window.push_back(rec);
            if window.len() > 2 * span + 1 {
                window.pop_front();
            }
            if window.len() == 2 * span + 1 {
                let centre = &window[span];
                if centre.step.is_multiple_of(stride) && centre.t >= snapshot_start - 1e-12 {
                    out.triplets.push(Triplet {
                        before: self.snapshot(&window[0])?,
                        center: self.snapshot(centre)?,
                        after: self.snapshot(&window[2 * span])?,
                        delta: span as f64 * self.dt,
                    });
                }
            }

            if step == steps {
                break;
            }
            x = self.advance(&history, &x, t)?;
            let norm = x.amax();
            if !norm.is_finite() || norm > self.blowup {
                return Err(self.blow_up(t + self.dt, &x, &format!("|X| exceeded {:e}", self.blowup)));
            }
        }
        Ok(())
    }
}

/// `run_scenario(config)`.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunOutput, Box<RunFailure>> {
    let fail = |error| Box::new(RunFailure { error, partial: RunOutput::empty() });
    config.validate().map_err(fail)?;
    let setup = config.plant_setup().map_err(fail)?;
    let schedule = config.delay_schedule().map_err(fail)?;
    let sim = Simulator::new(
        setup.plant.as_ref(),
        setup.controller.as_ref(),
        schedule,
        config.delay,
        config.grid,
        config.dt,
    )
    .with_blowup_threshold(config.blowup_threshold);
    sim.run(
        &State::from_column_slice(&config.x0),
        config.steps(),
        config.stride,
        config.triplet_span,
        config.snapshot_start,
    )
}

impl RunOutput {
    pub fn empty() -> Self {
        Self {
            trajectory: Trajectory::default(),
            triplets: Vec::new(),
            max_what_boundary: 0.0,
            max_utilde_boundary: 0.0,
            max_estimate: 0.0,
        }
    }

    pub fn final_state(&self) -> Option<&[f64]> {
        self.trajectory.states.last().map(|s| s.as_slice())
    }
}
