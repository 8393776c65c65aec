//! Kernel functions of the transformed system.
//!
//! Every kernel is expressed through `ŵ` and its spatial derivatives, the
//! predictor `p̂`, and the transition field. `d/dx` of composite factors such
//! as `f(p̂, ŵ + κ(p̂))` is expanded analytically by the chain rule using the
//! model's second derivatives (and `κ'''`), so kernel error stays at the
//! quadrature and finite-difference order of the inputs.
//!
//! Notation used below, per node: `û = ŵ + κ(p̂)`, `g = f(p̂, û)`,
//! `A = ∂f/∂p̂`, `b = ∂f/∂û`, `p̂_x = D̂g`, `û_x = ŵ_x + κ'·p̂_x`, and
//! `I(x) = ∫₀ˣ Φ(x, y)[g + b (y − 1) û_x](y) dy`.
//! Row-vector kernels (`q2`, `q4`, `q6`) are stored transposed, one
//! n-vector per node.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::history::DelayEstimate;
use crate::plant::{Controller, PlantModel, State};
use crate::predictor::TransitionField;
use crate::profile::GridProfile;

/// Fields at one time instant, all on the same grid.
#[derive(Debug, Clone, Copy)]
pub struct KernelFields<'a> {
    pub state: &'a State,
    pub phat: &'a GridProfile,
    pub what: &'a GridProfile,
    pub what_x: &'a GridProfile,
    pub what_xx: &'a GridProfile,
    pub what_xxx: &'a GridProfile,
    pub transition: &'a TransitionField,
    /// True delay `D` (available in a verification context only).
    pub true_delay: f64,
    pub estimate: DelayEstimate,
    /// `u(0, t) = U(t − D)`.
    pub u0: f64,
    /// `ũ_x(0, t)`.
    pub utilde_x0: f64,
}

impl KernelFields<'_> {
    fn check(&self) -> Result<()> {
        let m = self.phat.m();
        let grids = [self.what, self.what_x, self.what_xx, self.what_xxx];
        if grids.iter().any(|g| g.m() != m) || self.transition.m() != m {
            return Err(Error::GridMismatch("kernel inputs live on different grids".into()));
        }
        if !(self.estimate.value > 0.0) {
            return Err(Error::Usage("delay estimate must be positive".into()));
        }
        Ok(())
    }
}

/// Chain-rule quantities at one node.
#[derive(Debug, Clone)]
struct NodeTerms {
    x: f64,
    p: State,
    uh: f64,
    g: State,
    jac: DMatrix<f64>,
    b: State,
    k1: State,
    k2: DMatrix<f64>,
    px: State,
    ux: f64,
    gx: State,
    uxx: f64,
    uxxx: f64,
    jac_x: DMatrix<f64>,
    bux: DMatrix<f64>,
    c: State,
    h: State,
    hx: State,
}

fn node_terms(model: &dyn PlantModel, ctrl: &dyn Controller, f: &KernelFields<'_>) -> Vec<NodeTerms> {
    let d = f.estimate.value;
    (0..f.phat.len())
        .map(|i| {
            let x = f.phat.x(i);
            let p = f.phat.vector(i);
            let uh = f.what.at(i) + ctrl.kappa(&p);
            let g = model.f(&p, uh);
            let jac = model.df_dx(&p, uh);
            let b = model.df_du(&p, uh);
            let bux = model.d2f_dudx(&p, uh);
            let c = model.d2f_du2(&p, uh);
            let k1 = ctrl.dkappa(&p);
            let k2 = ctrl.d2kappa(&p);

            let px = &g * d;
            let ux = f.what_x.at(i) + k1.dot(&px);
            let gx = &jac * &px + &b * ux;
            let pxx = &gx * d;
            let uxx = f.what_xx.at(i) + px.dot(&(&k2 * &px)) + k1.dot(&pxx);

            let jac_x = model.d2f_dx2_along(&p, uh, &px) + &bux * ux;
            let b_x = &bux * &px + &c * ux;
            let gxx = &jac_x * &px + &jac * &pxx + &b_x * ux + &b * uxx;
            let pxxx = gxx * d;
            let k3 = ctrl.d3kappa_along(&p, &px);
            let uxxx = f.what_xxx.at(i)
                + px.dot(&(&k3 * &px))
                + 3.0 * px.dot(&(&k2 * &pxx))
                + k1.dot(&pxxx);

            let h = &g + &b * ((x - 1.0) * ux);
            let hx = &gx + &b_x * ((x - 1.0) * ux) + &b * ux + &b * ((x - 1.0) * uxx);
            NodeTerms { x, p, uh, g, jac, b, k1, k2, px, ux, gx, uxx, uxxx, jac_x, bux, c, h, hx }
        })
        .collect()
}

fn transported(terms: &[NodeTerms], field: &TransitionField) -> Vec<DVector<f64>> {
    let integrand: Vec<_> = terms.iter().map(|t| t.h.clone()).collect();
    field.transported_integral(&integrand)
}

fn scalar_profile(m: usize, values: Vec<f64>) -> GridProfile {
    GridProfile::scalar(m, values).expect("kernel profile shape")
}

fn vector_profile(m: usize, nodes: &[DVector<f64>]) -> GridProfile {
    GridProfile::from_vectors(m, nodes).expect("kernel profile shape")
}

/// Kernels of the first-order target system.
#[derive(Debug, Clone)]
pub struct FirstOrderKernels {
    pub p1: GridProfile,
    pub p2: GridProfile,
    pub q1: GridProfile,
    pub q2: GridProfile,
    /// `f(p̂(0), u(0)) − f(p̂(0), û(0))`.
    pub f_utilde: State,
    /// `∂f/∂p̂` difference at `x = 0`, same arguments as `f_utilde`.
    pub f_dp: DMatrix<f64>,
    /// `∂f/∂û` difference at `x = 0`.
    pub f_du: State,
}

/// Kernels of the spatial-derivative systems.
#[derive(Debug, Clone)]
pub struct DerivativeKernels {
    pub p3: GridProfile,
    pub p4: GridProfile,
    pub q3: GridProfile,
    pub q4: GridProfile,
    pub q5: GridProfile,
    pub q6: GridProfile,
}

/// Analytic time derivatives of `û` and `p̂`.
#[derive(Debug, Clone)]
pub struct TimeRates {
    pub uhat_t: GridProfile,
    pub uhat_xt: GridProfile,
    pub phat_t: GridProfile,
}

/// Every kernel at one time instant.
#[derive(Debug, Clone)]
pub struct KernelSet {
    pub first: FirstOrderKernels,
    pub derivative: DerivativeKernels,
    pub rates: TimeRates,
    pub q1_t: f64,
    pub q7: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct KernelScalars {
    pub f_utilde: f64,
    pub f_dp: f64,
    pub f_du: f64,
    pub q1_t: f64,
    pub q7: f64,
}

impl KernelSet {
    /// Largest-magnitude component of each scalar kernel.
    pub fn scalars(&self) -> KernelScalars {
        let max = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0_f64, |a, v| if v.abs() > a.abs() { v } else { a });
        KernelScalars {
            f_utilde: max(&mut self.first.f_utilde.iter().copied()),
            f_dp: max(&mut self.first.f_dp.iter().copied()),
            f_du: max(&mut self.first.f_du.iter().copied()),
            q1_t: self.q1_t,
            q7: self.q7,
        }
    }
}

fn first_order(
    model: &dyn PlantModel,
    f: &KernelFields<'_>,
    terms: &[NodeTerms],
    integral: &[DVector<f64>],
) -> FirstOrderKernels {
    let m = f.phat.m();
    let d = f.estimate.value;
    let ratio = f.true_delay / d;
    let p1 = terms.iter().map(|t| t.ux / d).collect();
    let p2 = terms.iter().map(|t| ratio * (t.x - 1.0) * t.ux).collect();
    let q1 = terms
        .iter()
        .zip(integral)
        .map(|(t, i)| (t.x - 1.0) * t.ux - d * t.k1.dot(i))
        .collect();
    let q2: Vec<_> = terms
        .iter()
        .enumerate()
        .map(|(i, t)| f.transition.from_origin(i).transpose() * &t.k1 * d)
        .collect();

    let x = f.state;
    let uh0 = terms[0].uh;
    FirstOrderKernels {
        p1: scalar_profile(m, p1),
        p2: scalar_profile(m, p2),
        q1: scalar_profile(m, q1),
        q2: vector_profile(m, &q2),
        f_utilde: model.f(x, f.u0) - model.f(x, uh0),
        f_dp: model.df_dx(x, f.u0) - model.df_dx(x, uh0),
        f_du: model.df_du(x, f.u0) - model.df_du(x, uh0),
    }
}

fn derivative_kernels(
    model: &dyn PlantModel,
    ctrl: &dyn Controller,
    f: &KernelFields<'_>,
    terms: &[NodeTerms],
    integral: &[DVector<f64>],
) -> DerivativeKernels {
    let m = f.phat.m();
    let d = f.estimate.value;
    let ratio = f.true_delay / d;
    let n = terms.len();
    let (mut p3, mut p4, mut q3, mut q5) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    let (mut q4, mut q6) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for (i, (t, big_i)) in terms.iter().zip(integral).enumerate() {
        let xm1 = t.x - 1.0;
        p3.push(t.uxx / d);
        p4.push(ratio * (t.ux + xm1 * t.uxx));

        // a = D̂(K₂g + Aᵀκ'), the transposed x-derivative of D̂κ'(p̂)Φ(x,0)
        // with the trailing Φ removed.
        let a = (&t.k2 * &t.g + t.jac.transpose() * &t.k1) * d;
        let k1x = &t.k2 * &t.g * d;
        let k3 = ctrl.d3kappa_along(&t.p, &t.px);
        let a_x = (&t.k2 * &t.gx + &k3 * &t.g + t.jac.transpose() * &k1x + t.jac_x.transpose() * &t.k1) * d;
        let big_ix = &t.jac * big_i * d + &t.h;

        q3.push(t.ux + xm1 * t.uxx - d * (a.dot(big_i) + t.k1.dot(&t.h)));
        q5.push(
            2.0 * t.uxx + xm1 * t.uxxx
                - d * (a_x.dot(big_i) + a.dot(&big_ix) + k1x.dot(&t.h) + t.k1.dot(&t.hx)),
        );
        let phi_t = f.transition.from_origin(i).transpose();
        q4.push(&phi_t * &a * d);
        q6.push(&phi_t * (&a_x + t.jac.transpose() * &a * d) * d);
    }
    let _ = model;
    DerivativeKernels {
        p3: scalar_profile(m, p3),
        p4: scalar_profile(m, p4),
        q3: scalar_profile(m, q3),
        q4: vector_profile(m, &q4),
        q5: scalar_profile(m, q5),
        q6: vector_profile(m, &q6),
    }
}

fn uhat_rates(f: &KernelFields<'_>, terms: &[NodeTerms]) -> (GridProfile, GridProfile) {
    let m = f.phat.m();
    let DelayEstimate { value: d, rate, .. } = f.estimate;
    let ut = terms.iter().map(|t| (1.0 + rate * (t.x - 1.0)) / d * t.ux).collect();
    let uxt = terms
        .iter()
        .map(|t| (rate * t.ux + (1.0 + rate * (t.x - 1.0)) * t.uxx) / d)
        .collect();
    (scalar_profile(m, ut), scalar_profile(m, uxt))
}

fn phat_rate(
    f: &KernelFields<'_>,
    terms: &[NodeTerms],
    integral: &[DVector<f64>],
    f_utilde: &State,
) -> GridProfile {
    let DelayEstimate { value: d, rate, .. } = f.estimate;
    let nodes: Vec<_> = terms
        .iter()
        .zip(integral)
        .enumerate()
        .map(|(i, (t, big_i))| {
            (&t.px + f.transition.from_origin(i) * f_utilde * d + big_i * (rate * d)) / d
        })
        .collect();
    vector_profile(f.phat.m(), &nodes)
}

/// `∂ₜ[∂f/∂p̂(p̂, û)] = ∂²f/∂p̂²[p̂_t] + ∂²f/∂û∂p̂ û_t`.
fn jacobian_rate(model: &dyn PlantModel, t: &NodeTerms, phat_t: &State, uhat_t: f64) -> DMatrix<f64> {
    model.d2f_dx2_along(&t.p, t.uh, phat_t) + &t.bux * uhat_t
}

fn q1_rate(
    model: &dyn PlantModel,
    f: &KernelFields<'_>,
    terms: &[NodeTerms],
    integral: &[DVector<f64>],
    rates: &TimeRates,
) -> f64 {
    let DelayEstimate { value: d, rate, .. } = f.estimate;
    // I_t solves (I_t)_x = D̂A I_t + (Ḋ̂A + D̂A_t) I + h_t with I_t(0) = 0.
    let integrand: Vec<_> = terms
        .iter()
        .zip(integral)
        .enumerate()
        .map(|(i, (t, big_i))| {
            let pt = rates.phat_t.vector(i);
            let ut = rates.uhat_t.at(i);
            let uxt = rates.uhat_xt.at(i);
            let xm1 = t.x - 1.0;
            let a_t = jacobian_rate(model, t, &pt, ut);
            let b_t = &t.bux * &pt + &t.c * ut;
            let h_t = &t.jac * &pt + &t.b * ut + b_t * (xm1 * t.ux) + &t.b * (xm1 * uxt);
            (&t.jac * rate + a_t * d) * big_i + h_t
        })
        .collect();
    let big_it = f.transition.transported_integral(&integrand);
    let m = terms.len() - 1;
    let last = &terms[m];
    let pt1 = rates.phat_t.vector(m);
    -rate * last.k1.dot(&integral[m]) - d * (&last.k2 * &pt1).dot(&integral[m]) - d * last.k1.dot(&big_it[m])
}

fn q7_value(
    model: &dyn PlantModel,
    f: &KernelFields<'_>,
    terms: &[NodeTerms],
    first: &FirstOrderKernels,
    rates: &TimeRates,
    q1_t: f64,
) -> f64 {
    let DelayEstimate { value: d, rate, accel } = f.estimate;
    let m = terms.len() - 1;
    let field = f.transition;
    let h = 1.0 / m as f64;

    // Φ_t(1, 0) = Φ(1, 0) ∫₀¹ Φ(y, 0)⁻¹ (Ḋ̂A + D̂A_t) Φ(y, 0) dy
    let n = f.state.len();
    let mut acc = DMatrix::zeros(n, n);
    let mut prev: Option<DMatrix<f64>> = None;
    for (i, t) in terms.iter().enumerate() {
        let a_t = jacobian_rate(model, t, &rates.phat_t.vector(i), rates.uhat_t.at(i));
        let cur = field.to_origin(i) * (&t.jac * rate + a_t * d) * field.from_origin(i);
        if let Some(p) = prev {
            acc += (p + &cur) * (0.5 * h);
        }
        prev = Some(cur);
    }
    let phi1 = field.from_origin(m);
    let phi1_t = phi1 * acc;
    let last = &terms[m];
    let pt1 = rates.phat_t.vector(m);
    let q2_t = (phi1.transpose() * (&last.k1 * rate + &last.k2 * &pt1 * d)) + phi1_t.transpose() * &last.k1 * d;

    let x = f.state;
    let t0 = &terms[0];
    let xdot = model.f(x, f.u0);
    let u_x0 = f.utilde_x0 + t0.ux;
    let big_d = f.true_delay;
    let mismatch = big_d - d;
    let ut_t0 = (f.utilde_x0 - mismatch * first.p1.at(0) - rate * first.p2.at(0)) / big_d;
    let f_utilde_t = &first.f_dp * xdot + &first.f_du * (u_x0 / big_d) + model.df_du(x, t0.uh) * ut_t0;

    -accel * first.q1.at(m) - rate * q1_t
        + q2_t.dot(&first.f_utilde)
        + first.q2.vector(m).dot(&f_utilde_t)
}

/// `p1, p2, q1, q2` profiles and the scalar mismatch `f_ũ`.
pub fn eval_first_order_kernels(
    model: &dyn PlantModel,
    controller: &dyn Controller,
    fields: &KernelFields<'_>,
) -> Result<FirstOrderKernels> {
    fields.check()?;
    let terms = node_terms(model, controller, fields);
    let integral = transported(&terms, fields.transition);
    Ok(first_order(model, fields, &terms, &integral))
}

/// `p3 = ∂ₓp1`, `p4 = ∂ₓp2`, `q3 = ∂ₓq1`, `q4 = ∂ₓq2`, `q5 = ∂ₓq3`,
/// `q6 = ∂ₓq4`, all expanded analytically.
pub fn eval_derivative_kernels(
    model: &dyn PlantModel,
    controller: &dyn Controller,
    fields: &KernelFields<'_>,
) -> Result<DerivativeKernels> {
    fields.check()?;
    let terms = node_terms(model, controller, fields);
    let integral = transported(&terms, fields.transition);
    Ok(derivative_kernels(model, controller, fields, &terms, &integral))
}

/// `û_t = (1 + Ḋ̂(x − 1)) û_x / D̂` and its x-derivative `û_xt`.
pub fn eval_uhat_time_derivatives(
    model: &dyn PlantModel,
    controller: &dyn Controller,
    fields: &KernelFields<'_>,
) -> Result<(GridProfile, GridProfile)> {
    fields.check()?;
    let terms = node_terms(model, controller, fields);
    Ok(uhat_rates(fields, &terms))
}

/// `û_t`, `û_xt` and `p̂_t`.
pub fn eval_time_rates(
    model: &dyn PlantModel,
    controller: &dyn Controller,
    fields: &KernelFields<'_>,
) -> Result<TimeRates> {
    fields.check()?;
    let terms = node_terms(model, controller, fields);
    let integral = transported(&terms, fields.transition);
    let first = first_order(model, fields, &terms, &integral);
    let (uhat_t, uhat_xt) = uhat_rates(fields, &terms);
    let phat_t = phat_rate(fields, &terms, &integral, &first.f_utilde);
    Ok(TimeRates { uhat_t, uhat_xt, phat_t })
}

/// `∂ₜq1(1, t)`, including the variation of `Φ` and of `κ'(p̂(1, t))`.
pub fn eval_q1_t(
    model: &dyn PlantModel,
    controller: &dyn Controller,
    fields: &KernelFields<'_>,
    rates: &TimeRates,
) -> Result<f64> {
    fields.check()?;
    let terms = node_terms(model, controller, fields);
    let integral = transported(&terms, fields.transition);
    Ok(q1_rate(model, fields, &terms, &integral, rates))
}

/// `q7(t) = ∂ₜ[−Ḋ̂ q1(1, t) + q2(1, t) f_ũ(t)]`, i.e. `ŵ_xt(1, t)`.
pub fn eval_q7(
    model: &dyn PlantModel,
    controller: &dyn Controller,
    fields: &KernelFields<'_>,
    rates: &TimeRates,
    q1_t: f64,
) -> Result<f64> {
    fields.check()?;
    let terms = node_terms(model, controller, fields);
    let integral = transported(&terms, fields.transition);
    let first = first_order(model, fields, &terms, &integral);
    Ok(q7_value(model, fields, &terms, &first, rates, q1_t))
}

/// All kernels, sharing one pass of node terms.
pub fn eval_kernels(
    model: &dyn PlantModel,
    controller: &dyn Controller,
    fields: &KernelFields<'_>,
) -> Result<KernelSet> {
    fields.check()?;
    let terms = node_terms(model, controller, fields);
    let integral = transported(&terms, fields.transition);
    let first = first_order(model, fields, &terms, &integral);
    let derivative = derivative_kernels(model, controller, fields, &terms, &integral);
    let (uhat_t, uhat_xt) = uhat_rates(fields, &terms);
    let phat_t = phat_rate(fields, &terms, &integral, &first.f_utilde);
    let rates = TimeRates { uhat_t, uhat_xt, phat_t };
    let q1_t = q1_rate(model, fields, &terms, &integral, &rates);
    let q7 = q7_value(model, fields, &terms, &first, &rates, q1_t);
    Ok(KernelSet { first, derivative, rates, q1_t, q7 })
}

/// `û_x = ŵ_x + κ'(p̂)·D̂ f(p̂, û)` at every node.
pub fn uhat_x_from_what(
    model: &dyn PlantModel,
    controller: &dyn Controller,
    phat: &GridProfile,
    what: &GridProfile,
    what_x: &GridProfile,
    dhat: f64,
) -> GridProfile {
    let values = (0..phat.len())
        .map(|i| {
            let p = phat.vector(i);
            let uh = what.at(i) + controller.kappa(&p);
            what_x.at(i) + controller.dkappa(&p).dot(&(model.f(&p, uh) * dhat))
        })
        .collect();
    scalar_profile(phat.m(), values)
}
