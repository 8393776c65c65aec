//! Plant dynamics, nominal feedback laws and their analytic derivatives.
//!
//! Every downstream kernel is built from first and second derivatives of the
//! plant `f(X, u)` and of the feedback `κ(X)`. They are supplied analytically
//! here and checked against central finite differences by
//! [`check_derivative_consistency`].

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Plant state `X ∈ ℝⁿ`.
pub type State = DVector<f64>;

/// Scalar-input plant `Ẋ = f(X, u)` with the derivatives the kernels need.
///
/// Matrix conventions: `df_dx[(i, j)] = ∂fᵢ/∂Xⱼ`,
/// `d2f_dudx[(i, j)] = ∂²fᵢ/∂u∂Xⱼ`, and
/// `d2f_dx2_along(x, u, v)[(i, j)] = Σₖ ∂²fᵢ/∂Xⱼ∂Xₖ vₖ`.
pub trait PlantModel: Debug + Send + Sync {
    fn dim(&self) -> usize;
    fn f(&self, x: &State, u: f64) -> State;
    fn df_dx(&self, x: &State, u: f64) -> DMatrix<f64>;
    fn df_du(&self, x: &State, u: f64) -> State;
    fn d2f_dudx(&self, x: &State, u: f64) -> DMatrix<f64>;
    fn d2f_du2(&self, x: &State, u: f64) -> State;
    fn d2f_dx2_along(&self, x: &State, u: f64, v: &State) -> DMatrix<f64>;

    /// Declares strong forward completeness of `Ẋ = f(X, Ω)`. Not verified.
    fn forward_complete_declared(&self) -> bool {
        true
    }
}

/// Nominal delay-free feedback `U = κ(X)` with `κ(0) = 0`.
///
/// `d3kappa_along(x, v)[(i, j)] = Σₖ ∂³κ/∂Xᵢ∂Xⱼ∂Xₖ vₖ`.
pub trait Controller: Debug + Send + Sync {
    fn kappa(&self, x: &State) -> f64;
    /// Gradient of `κ`, used as a row vector.
    fn dkappa(&self, x: &State) -> State;
    fn d2kappa(&self, x: &State) -> DMatrix<f64>;
    fn d3kappa_along(&self, x: &State, v: &State) -> DMatrix<f64>;
}

/// Evaluates `f(X, u)` with dimension and finiteness checks.
pub fn eval_f(model: &dyn PlantModel, x: &State, u: f64) -> Result<State> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: x.len(),
        });
    }
    let out = model.f(x, u);
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::NumericOverflow("plant dynamics".into()))
    }
}

/// Known interval for the true delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DelayBounds {
    pub lower: f64,
    pub upper: f64,
}

impl DelayBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower > 0.0) || !lower.is_finite() {
            return Err(Error::config("d_lower", "must be positive"));
        }
        if !(upper >= lower) || !upper.is_finite() {
            return Err(Error::config("d_upper", "must be finite and at least d_lower"));
        }
        Ok(Self { lower, upper })
    }

    pub fn contains(&self, d: f64) -> bool {
        d >= self.lower && d <= self.upper
    }
}

// ---------------------------------------------------------------------------
// Built-in plants

/// `Ẋ = u`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Integrator;

impl PlantModel for Integrator {
    fn dim(&self) -> usize {
        1
    }
    fn f(&self, _x: &State, u: f64) -> State {
        State::from_element(1, u)
    }
    fn df_dx(&self, _x: &State, _u: f64) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }
    fn df_du(&self, _x: &State, _u: f64) -> State {
        State::from_element(1, 1.0)
    }
    fn d2f_dudx(&self, _x: &State, _u: f64) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }
    fn d2f_du2(&self, _x: &State, _u: f64) -> State {
        State::zeros(1)
    }
    fn d2f_dx2_along(&self, _x: &State, _u: f64, _v: &State) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }
}

/// `Ẋ = aX + bu` (scalar).
#[derive(Debug, Clone, Copy)]
pub struct ScalarLinear {
    pub a: f64,
    pub b: f64,
}

impl PlantModel for ScalarLinear {
    fn dim(&self) -> usize {
        1
    }
    fn f(&self, x: &State, u: f64) -> State {
        State::from_element(1, self.a * x[0] + self.b * u)
    }
    fn df_dx(&self, _x: &State, _u: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.a)
    }
    fn df_du(&self, _x: &State, _u: f64) -> State {
        State::from_element(1, self.b)
    }
    fn d2f_dudx(&self, _x: &State, _u: f64) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }
    fn d2f_du2(&self, _x: &State, _u: f64) -> State {
        State::zeros(1)
    }
    fn d2f_dx2_along(&self, _x: &State, _u: f64, _v: &State) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }
}

/// `Ẋ = −X³ + u`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Cubic;

impl PlantModel for Cubic {
    fn dim(&self) -> usize {
        1
    }
    fn f(&self, x: &State, u: f64) -> State {
        State::from_element(1, -x[0].powi(3) + u)
    }
    fn df_dx(&self, x: &State, _u: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, -3.0 * x[0] * x[0])
    }
    fn df_du(&self, _x: &State, _u: f64) -> State {
        State::from_element(1, 1.0)
    }
    fn d2f_dudx(&self, _x: &State, _u: f64) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }
    fn d2f_du2(&self, _x: &State, _u: f64) -> State {
        State::zeros(1)
    }
    fn d2f_dx2_along(&self, x: &State, _u: f64, v: &State) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, -6.0 * x[0] * v[0])
    }
}

/// Planar double integrator `ẋ₁ = x₂, ẋ₂ = u`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DoubleIntegrator;

impl PlantModel for DoubleIntegrator {
    fn dim(&self) -> usize {
        2
    }
    fn f(&self, x: &State, u: f64) -> State {
        State::from_vec(vec![x[1], u])
    }
    fn df_dx(&self, _x: &State, _u: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])
    }
    fn df_du(&self, _x: &State, _u: f64) -> State {
        State::from_vec(vec![0.0, 1.0])
    }
    fn d2f_dudx(&self, _x: &State, _u: f64) -> DMatrix<f64> {
        DMatrix::zeros(2, 2)
    }
    fn d2f_du2(&self, _x: &State, _u: f64) -> State {
        State::zeros(2)
    }
    fn d2f_dx2_along(&self, _x: &State, _u: f64, _v: &State) -> DMatrix<f64> {
        DMatrix::zeros(2, 2)
    }
}

// ---------------------------------------------------------------------------
// Built-in controllers

/// `κ(X) = −K·X`.
#[derive(Debug, Clone)]
pub struct LinearFeedback {
    pub gain: State,
}

impl LinearFeedback {
    pub fn new(gain: &[f64]) -> Self {
        Self {
            gain: State::from_column_slice(gain),
        }
    }
}

impl Controller for LinearFeedback {
    fn kappa(&self, x: &State) -> f64 {
        -self.gain.dot(x)
    }
    fn dkappa(&self, _x: &State) -> State {
        -&self.gain
    }
    fn d2kappa(&self, x: &State) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }
    fn d3kappa_along(&self, x: &State, _v: &State) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }
}

/// `κ(X) = X³ − X`, cancelling the cubic drift so the closed loop is `ẋ = −x`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CubicCancelling;

impl Controller for CubicCancelling {
    fn kappa(&self, x: &State) -> f64 {
        x[0].powi(3) - x[0]
    }
    fn dkappa(&self, x: &State) -> State {
        State::from_element(1, 3.0 * x[0] * x[0] - 1.0)
    }
    fn d2kappa(&self, x: &State) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 6.0 * x[0])
    }
    fn d3kappa_along(&self, _x: &State, v: &State) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 6.0 * v[0])
    }
}

// ---------------------------------------------------------------------------
// Lyapunov certificates

/// Quadratic certificate `V(X) = XᵀPX` with the decay and bound constants of
/// the delay-free closed loop.
#[derive(Debug, Clone)]
pub struct LyapunovCertificate {
    pub p: DMatrix<f64>,
    pub lambda: f64,
    pub c1: f64,
    pub c2: f64,
}

impl LyapunovCertificate {
    pub fn v(&self, x: &State) -> f64 {
        x.dot(&(&self.p * x))
    }

    pub fn dv_dx(&self, x: &State) -> State {
        (&self.p + self.p.transpose()) * x
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovSample {
    pub x: Vec<f64>,
    pub lower_bound: bool,
    pub upper_bound: bool,
    pub gradient_bound: bool,
    pub decay: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovReport {
    pub samples: Vec<LyapunovSample>,
    pub pass: bool,
}

/// Checks `|X|² ≤ V ≤ c₁|X|²`, `|∂V/∂X| ≤ c₂|X|` and `∂V/∂X·f(X, κ(X)) ≤ −λV`
/// at every sample, with an absolute tolerance of `1e-12`.
pub fn check_lyapunov(
    cert: &LyapunovCertificate,
    model: &dyn PlantModel,
    controller: &dyn Controller,
    samples: &[State],
) -> LyapunovReport {
    const TOL: f64 = 1e-12;
    let samples: Vec<_> = samples
        .iter()
        .map(|x| {
            let norm2 = x.norm_squared();
            let v = cert.v(x);
            let grad = cert.dv_dx(x);
            let vdot = grad.dot(&model.f(x, controller.kappa(x)));
            LyapunovSample {
                x: x.iter().copied().collect(),
                lower_bound: norm2 <= v + TOL,
                upper_bound: v <= cert.c1 * norm2 + TOL,
                gradient_bound: grad.norm() <= cert.c2 * norm2.sqrt() + TOL,
                decay: vdot <= -cert.lambda * v + TOL,
            }
        })
        .collect();
    let pass = samples
        .iter()
        .all(|s| s.lower_bound && s.upper_bound && s.gradient_bound && s.decay);
    LyapunovReport { samples, pass }
}

// ---------------------------------------------------------------------------
// Derivative consistency

#[derive(Debug, Clone, Serialize)]
pub struct DerivativeCheck {
    pub name: &'static str,
    pub max_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DerivativeReport {
    pub step: f64,
    pub tolerance: f64,
    pub checks: Vec<DerivativeCheck>,
    pub pass: bool,
}

impl DerivativeReport {
    pub fn error_of(&self, name: &str) -> Option<f64> {
        self.checks.iter().find(|c| c.name == name).map(|c| c.max_error)
    }
}

fn rel_err(analytic: f64, estimate: f64) -> f64 {
    (analytic - estimate).abs() / analytic.abs().max(1.0)
}

/// Compares every analytic derivative with a central difference of the next
/// lower derivative, step `h`. Passes iff every relative error is at most
/// `constant · h²`.
pub fn check_derivative_consistency(
    model: &dyn PlantModel,
    controller: &dyn Controller,
    samples: &[(State, f64)],
    h: f64,
    constant: f64,
) -> DerivativeReport {
    let mut worst = [0.0_f64; 7];
    let names = [
        "df_dx",
        "df_du",
        "d2f_dudx",
        "d2f_du2",
        "d2f_dx2",
        "dkappa_dx",
        "d2kappa_dx2",
    ];
    let mut worst_k3 = 0.0_f64;
    for (x, u) in samples {
        let n = x.len();
        let dir = State::from_element(n, 1.0);

        let fx = model.df_dx(x, *u);
        let fu = model.df_du(x, *u);
        let fux = model.d2f_dudx(x, *u);
        let fuu = model.d2f_du2(x, *u);
        let fxx = model.d2f_dx2_along(x, *u, &dir);

        for j in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let col = (model.f(&xp, *u) - model.f(&xm, *u)) / (2.0 * h);
            for i in 0..n {
                worst[0] = worst[0].max(rel_err(fx[(i, j)], col[i]));
            }
        }
        let du = (model.f(x, u + h) - model.f(x, u - h)) / (2.0 * h);
        let dfx_du = (model.df_dx(x, u + h) - model.df_dx(x, u - h)) / (2.0 * h);
        let dfu_du = (model.df_du(x, u + h) - model.df_du(x, u - h)) / (2.0 * h);
        let dfx_dir =
            (model.df_dx(&(x + h * &dir), *u) - model.df_dx(&(x - h * &dir), *u)) / (2.0 * h);
        for i in 0..n {
            worst[1] = worst[1].max(rel_err(fu[i], du[i]));
            worst[3] = worst[3].max(rel_err(fuu[i], dfu_du[i]));
            for j in 0..n {
                worst[2] = worst[2].max(rel_err(fux[(i, j)], dfx_du[(i, j)]));
                worst[4] = worst[4].max(rel_err(fxx[(i, j)], dfx_dir[(i, j)]));
            }
        }

        let k1 = controller.dkappa(x);
        let k2 = controller.d2kappa(x);
        let k3 = controller.d3kappa_along(x, &dir);
        let k3_fd = (controller.d2kappa(&(x + h * &dir)) - controller.d2kappa(&(x - h * &dir)))
            / (2.0 * h);
        for j in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let dk = (controller.kappa(&xp) - controller.kappa(&xm)) / (2.0 * h);
            worst[5] = worst[5].max(rel_err(k1[j], dk));
            let dk1 = (controller.dkappa(&xp) - controller.dkappa(&xm)) / (2.0 * h);
            for i in 0..n {
                worst[6] = worst[6].max(rel_err(k2[(i, j)], dk1[i]));
                worst_k3 = worst_k3.max(rel_err(k3[(i, j)], k3_fd[(i, j)]));
            }
        }
    }
    let tolerance = constant * h * h;
    let mut checks: Vec<_> = names
        .iter()
        .zip(worst)
        .map(|(&name, max_error)| DerivativeCheck { name, max_error })
        .collect();
    checks.push(DerivativeCheck {
        name: "d3kappa_dx3",
        max_error: worst_k3,
    });
    let pass = checks.iter().all(|c| c.max_error <= tolerance);
    DerivativeReport {
        step: h,
        tolerance,
        checks,
        pass,
    }
}

// ---------------------------------------------------------------------------
// Named built-in setups

/// Plant, feedback and (when available) certificate bundled under one name.
#[derive(Debug)]
pub struct PlantSetup {
    pub name: String,
    pub plant: Box<dyn PlantModel>,
    pub controller: Box<dyn Controller>,
    pub certificate: Option<LyapunovCertificate>,
}

/// Parameters recognised by [`builtin`]. Unused fields are ignored.
#[derive(Debug, Clone, Copy)]
pub struct PlantParams {
    pub a: f64,
    pub b: f64,
    pub gain: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 1.0,
            gain: 2.0,
        }
    }
}

pub const BUILTIN_PLANTS: [&str; 4] = ["integrator", "linear", "cubic", "double_integrator"];

/// Resolves a built-in plant by name.
///
/// * `integrator`: `f = u`, `κ = −X` (the gain parameter is not used).
/// * `linear`: `f = aX + bu`, `κ = −gain·X`.
/// * `cubic`: `f = −X³ + u`, `κ = X³ − X`.
/// * `double_integrator`: `κ = −x₁ − 2x₂`.
pub fn builtin(name: &str, params: PlantParams) -> Result<PlantSetup> {
    let scalar_cert = |lambda: f64| LyapunovCertificate {
        p: DMatrix::from_element(1, 1, 1.0),
        lambda,
        c1: 1.0,
        c2: 2.0,
    };
    let setup = match name {
        "integrator" => PlantSetup {
            name: name.into(),
            plant: Box::new(Integrator),
            controller: Box::new(LinearFeedback::new(&[1.0])),
            certificate: Some(scalar_cert(1.0)),
        },
        "linear" => {
            let PlantParams { a, b, gain } = params;
            if !(a.is_finite() && b.is_finite() && gain.is_finite()) {
                return Err(Error::config("a", "linear plant parameters must be finite"));
            }
            let margin = b * gain - a;
            PlantSetup {
                name: name.into(),
                plant: Box::new(ScalarLinear { a, b }),
                controller: Box::new(LinearFeedback::new(&[gain])),
                certificate: (margin > 0.0).then(|| scalar_cert(margin)),
            }
        }
        "cubic" => PlantSetup {
            name: name.into(),
            plant: Box::new(Cubic),
            controller: Box::new(CubicCancelling),
            certificate: Some(scalar_cert(1.0)),
        },
        "double_integrator" => {
            // Solves A_clᵀP + PA_cl = −I for A_cl = [[0, 1], [−1, −2]],
            // rescaled so that λ_min(P) = 1.
            let p = DMatrix::from_row_slice(2, 2, &[1.5, 0.5, 0.5, 0.5]);
            let lmin = 1.0 - std::f64::consts::FRAC_1_SQRT_2;
            PlantSetup {
                name: name.into(),
                plant: Box::new(DoubleIntegrator),
                controller: Box::new(LinearFeedback::new(&[1.0, 2.0])),
                certificate: Some(LyapunovCertificate {
                    p: p / lmin,
                    lambda: 0.5,
                    c1: 6.0,
                    c2: 12.0,
                }),
            }
        }
        other => {
            return Err(Error::config(
                "plant",
                format!("unknown plant `{other}`; expected one of {BUILTIN_PLANTS:?}"),
            ))
        }
    };
    Ok(setup)
}
