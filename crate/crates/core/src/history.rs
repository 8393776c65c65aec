//! Actuator history and the distributed input fields built from it.
//!
//! The scalar control `U` is recorded at uniform spacing. The transport
//! representation samples it along a line in `(θ, x)`:
//! `u(x, t) = U(t + D(x − 1))`, and the estimate `û` uses `D̂(t)` instead.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::plant::DelayBounds;
use crate::profile::{lagrange4, GridProfile};

/// Lagrange weights on nodes `0, …, width − 1` evaluated at `s`.
fn lagrange_weights(s: f64, width: usize) -> Vec<f64> {
    if width == 4 {
        return lagrange4(s).to_vec();
    }
    (0..width)
        .map(|j| {
            (0..width)
                .filter(|&i| i != j)
                .map(|i| (s - i as f64) / (j as f64 - i as f64))
                .product()
        })
        .collect()
}

/// Which one-sided limit to take at the activation instant `θ = 0`, where
/// the zero pre-history meets the first live control value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

const NODE_SNAP: f64 = 1e-9;

/// Uniformly sampled record of the applied control, `U(θ) = 0` for `θ < 0`.
#[derive(Debug, Clone)]
pub struct ControlHistory {
    dt: f64,
    /// Global index of `values[0]`.
    first: usize,
    values: Vec<f64>,
    retain: f64,
    kinks: Vec<f64>,
}

impl ControlHistory {
    /// `retain` is the minimum span kept behind the newest sample.
    pub fn new(dt: f64, retain: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::config("dt", "must be positive"));
        }
        Ok(Self {
            dt,
            first: 0,
            values: Vec::new(),
            retain: retain.max(0.0),
            kinks: Vec::new(),
        })
    }

    /// A history holding `U(tᵢ) = f(tᵢ)` for `tᵢ = i·dt ≤ t_end`, kept in full.
    pub fn from_fn(dt: f64, t_end: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let mut h = Self::new(dt, f64::INFINITY)?;
        let n = (t_end / dt + NODE_SNAP).floor() as usize;
        for i in 0..=n {
            h.push(f(i as f64 * dt));
        }
        Ok(h)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.first + self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Time of the newest sample.
    pub fn t_now(&self) -> f64 {
        (self.len() as f64 - 1.0) * self.dt
    }

    pub fn last(&self) -> Option<f64> {
        self.values.last().copied()
    }

    /// Appends the sample for the next time node and trims lazily.
    pub fn push(&mut self, u: f64) {
        self.values.push(u);
        if !self.retain.is_finite() {
            return;
        }
        let keep = (self.retain / self.dt).ceil() as usize + 8;
        if self.values.len() > 2 * keep {
            let drop = self.values.len() - keep;
            self.values.drain(..drop);
            self.first += drop;
        }
    }

    /// Overwrites the newest sample.
    pub fn set_last(&mut self, u: f64) {
        if let Some(v) = self.values.last_mut() {
            *v = u;
        }
    }

    /// `U(θ)`, right-continuous at the activation instant.
    pub fn sample(&self, theta: f64) -> Result<f64> {
        self.sample_side(theta, Side::Right)
    }

    /// Registers instants where `U` is known to lose smoothness. Cubic
    /// stencils are kept on one side of each, the same way they are kept off
    /// the activation instant `θ = 0`.
    pub fn set_kinks(&mut self, mut kinks: Vec<f64>) {
        kinks.retain(|k| k.is_finite() && *k > 0.0);
        kinks.sort_by(f64::total_cmp);
        kinks.dedup_by(|a, b| (*a - *b).abs() <= NODE_SNAP * self.dt);
        self.kinks = kinks;
    }

    pub fn kinks(&self) -> &[f64] {
        &self.kinks
    }

    /// Smooth piece `[lo, hi]` (in sample units) that `s` belongs to.
    fn piece(&self, s: f64, side: Side) -> (f64, f64) {
        let snap = NODE_SNAP;
        let mut lo = 0.0;
        let mut hi = f64::INFINITY;
        for &k in &self.kinks {
            let ks = k / self.dt;
            let before = match side {
                Side::Left => ks < s - snap,
                Side::Right => ks <= s + snap,
            };
            if before {
                lo = ks;
            } else {
                hi = ks;
                break;
            }
        }
        (lo, hi)
    }

    /// `U(θ)` by cubic interpolation; exact at the nodes, zero for `θ < 0`.
    ///
    /// Interpolation stencils never reach across `θ = 0` or a registered
    /// kink, so the jump and the kinks stay sharp. At those instants `side`
    /// selects the one-sided limit.
    pub fn sample_side(&self, theta: f64, side: Side) -> Result<f64> {
        let s = theta / self.dt;
        if s < -NODE_SNAP || (s <= NODE_SNAP && side == Side::Left) {
            return Ok(0.0);
        }
        let n = self.len();
        if n == 0 {
            return Err(Error::FutureQuery {
                theta,
                t_now: f64::NEG_INFINITY,
            });
        }
        let last = n - 1;
        if s > last as f64 + NODE_SNAP {
            return Err(Error::FutureQuery {
                theta,
                t_now: self.t_now(),
            });
        }
        let s = s.clamp(0.0, last as f64);
        let nearest = s.round();
        if (s - nearest).abs() <= NODE_SNAP {
            return self.value(nearest as usize, theta);
        }
        if last == 0 {
            return self.value(0, theta);
        }
        let (lo, hi) = self.piece(s, side);
        let mut first = (lo - NODE_SNAP).ceil().max(0.0) as usize;
        let mut end = ((hi + NODE_SNAP).floor().min(last as f64)) as usize;
        if end < first + 1 {
            // kinks closer than two samples; fall back to the full record
            first = 0;
            end = last;
        }
        let width = (end - first + 1).min(4);
        let base = s.floor() as usize;
        let lo_node = (base + 1).saturating_sub(width / 2).clamp(first, end + 1 - width);
        let mut acc = 0.0;
        for (k, wk) in lagrange_weights(s - lo_node as f64, width).iter().enumerate() {
            acc += wk * self.value(lo_node + k, theta)?;
        }
        Ok(acc)
    }

    fn value(&self, index: usize, theta: f64) -> Result<f64> {
        if index < self.first {
            return Err(Error::HistoryTrimmed {
                theta,
                start: self.first as f64 * self.dt,
            });
        }
        Ok(self.values[index - self.first])
    }
}

/// `U(θ)` at `θ = t_now` and before.
pub fn sample_control(history: &ControlHistory, theta: f64) -> Result<f64> {
    history.sample(theta)
}

/// `u(xᵢ, t) = U(t + D(xᵢ − 1))`.
pub fn distributed_true_input(
    history: &ControlHistory,
    t: f64,
    delay: f64,
    m: usize,
) -> Result<GridProfile> {
    distributed_input(history, t, delay, m)
}

/// `û(xᵢ, t) = U(t + D̂(t)(xᵢ − 1))`.
pub fn distributed_estimated_input(
    history: &ControlHistory,
    t: f64,
    schedule: &DelaySchedule,
    m: usize,
) -> Result<GridProfile> {
    distributed_input(history, t, schedule.eval(t).value, m)
}

pub(crate) fn distributed_input(
    history: &ControlHistory,
    t: f64,
    delay: f64,
    m: usize,
) -> Result<GridProfile> {
    let values = (0..=m)
        .map(|i| {
            if i == m {
                history.sample(t)
            } else {
                history.sample(t + delay * (i as f64 / m as f64 - 1.0))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    GridProfile::scalar(m, values)
}

// ---------------------------------------------------------------------------
// Delay-estimate schedules

/// `D̂(t)` with its first two time derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DelayEstimate {
    pub value: f64,
    pub rate: f64,
    pub accel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant { value: f64 },
    Ramp { start: f64, slope: f64 },
    Sinusoid { base: f64, amplitude: f64, frequency: f64, phase: f64 },
}

/// Prescribed delay estimate. Ramps and sinusoids pass through a C²
/// saturation that is the identity away from the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DelaySchedule {
    pub kind: ScheduleKind,
    pub bounds: DelayBounds,
}

/// Width of the saturation band as a fraction of `d_upper − d_lower`.
const BAND_FRACTION: f64 = 0.05;

impl DelaySchedule {
    pub fn new(kind: ScheduleKind, bounds: DelayBounds) -> Result<Self> {
        let (key, anchor) = match kind {
            ScheduleKind::Constant { value } => ("schedule_base", value),
            ScheduleKind::Ramp { start, slope } => {
                if !slope.is_finite() {
                    return Err(Error::config("schedule_slope", "must be finite"));
                }
                ("schedule_base", start)
            }
            ScheduleKind::Sinusoid { base, amplitude, frequency, phase } => {
                if ![amplitude, frequency, phase].iter().all(|v| v.is_finite()) {
                    return Err(Error::config("schedule_amplitude", "sinusoid parameters must be finite"));
                }
                ("schedule_base", base)
            }
        };
        if !anchor.is_finite() || !bounds.contains(anchor) {
            return Err(Error::config(
                key,
                format!("{anchor} lies outside [{}, {}]", bounds.lower, bounds.upper),
            ));
        }
        Ok(Self { kind, bounds })
    }

    pub fn constant(value: f64, bounds: DelayBounds) -> Result<Self> {
        Self::new(ScheduleKind::Constant { value }, bounds)
    }

    fn raw(&self, t: f64) -> (f64, f64, f64) {
        match self.kind {
            ScheduleKind::Constant { value } => (value, 0.0, 0.0),
            ScheduleKind::Ramp { start, slope } => (start + slope * t, slope, 0.0),
            ScheduleKind::Sinusoid { base, amplitude, frequency, phase } => {
                let arg = frequency * t + phase;
                (
                    base + amplitude * arg.sin(),
                    amplitude * frequency * arg.cos(),
                    -amplitude * frequency * frequency * arg.sin(),
                )
            }
        }
    }

    /// `(D̂, Ḋ̂, D̈̂)` at time `t`.
    pub fn eval(&self, t: f64) -> DelayEstimate {
        let (z, dz, ddz) = self.raw(t);
        if matches!(self.kind, ScheduleKind::Constant { .. }) {
            return DelayEstimate { value: z, rate: dz, accel: ddz };
        }
        let (s, ds, dds) = saturate(z, self.bounds);
        DelayEstimate {
            value: s,
            rate: ds * dz,
            accel: dds * dz * dz + ds * ddz,
        }
    }
}

/// An instant where the closed-loop control loses smoothness: derivative
/// number `order` of `U` jumps there (`order = 0` is the activation jump).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Kink {
    pub t: f64,
    pub order: usize,
}

/// Kinks of `U` on `[0, horizon]` up to `max_order`, starting from the jump
/// at `θ = 0`.
///
/// A kink at `τ` reappears one order smoother at `τ + D`, where it reaches
/// the plant, and at the time `t` with `t − D̂(t) = τ`, where it leaves the
/// predictor window.
pub fn propagate_kinks(delay: f64, schedule: &DelaySchedule, horizon: f64, max_order: usize) -> Vec<Kink> {
    let mut all = vec![Kink { t: 0.0, order: 0 }];
    let mut frontier = all.clone();
    while let Some(k) = frontier.pop() {
        if k.order >= max_order {
            continue;
        }
        for t in [k.t + delay, window_exit(schedule, k.t)] {
            if t <= horizon && t.is_finite() {
                let child = Kink { t, order: k.order + 1 };
                all.push(child);
                frontier.push(child);
            }
        }
    }
    all.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.order.cmp(&b.order)));
    all.dedup_by(|later, kept| (later.t - kept.t).abs() <= 1e-12);
    all
}

/// Solves `t − D̂(t) = τ` by bisection.
fn window_exit(schedule: &DelaySchedule, tau: f64) -> f64 {
    let g = |t: f64| t - schedule.eval(t).value - tau;
    let mut lo = tau;
    let mut hi = tau + schedule.bounds.upper + 1.0;
    if g(hi) < 0.0 {
        return f64::NAN;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// `eval_delay_schedule(spec, t)`.
pub fn eval_delay_schedule(schedule: &DelaySchedule, t: f64) -> DelayEstimate {
    schedule.eval(t)
}

/// Identity on `[lo + ε, hi − ε]`, `tanh` roll-off outside; C² everywhere.
/// Returns the value with its first and second derivative.
fn saturate(z: f64, bounds: DelayBounds) -> (f64, f64, f64) {
    let eps = BAND_FRACTION * (bounds.upper - bounds.lower);
    if eps <= 0.0 {
        return (bounds.lower, 0.0, 0.0);
    }
    let hi = bounds.upper - eps;
    let lo = bounds.lower + eps;
    let roll = |r: f64| {
        let th = r.tanh();
        let sech2 = 1.0 - th * th;
        (th, sech2, -2.0 * th * sech2)
    };
    if z > hi {
        let (th, d1, d2) = roll((z - hi) / eps);
        (hi + eps * th, d1, d2 / eps)
    } else if z < lo {
        let (th, d1, d2) = roll((z - lo) / eps);
        (lo + eps * th, d1, d2 / eps)
    } else {
        (z, 1.0, 0.0)
    }
}
