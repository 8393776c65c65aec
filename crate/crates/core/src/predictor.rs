//! Distributed predictor `p̂(x, t) = X(t + D̂(t)x)` and the transition
//! matrices of its linearisation.
//!
//! The predictor solves `dp̂/dx = D̂ f(p̂, û)` with `p̂(0) = X` by classical
//! fourth-order marching over the grid. The transition field holds
//! `Φ(xᵢ, 0)` for `dr/dx = D̂ ∂f/∂p̂(p̂(x), û(x)) r`, and `Φ(x, y)` is composed as
//! `Φ(x, 0) Φ(y, 0)⁻¹`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::history::{DelayEstimate, Side};
use crate::plant::{PlantModel, State};
use crate::profile::GridProfile;

/// Largest tolerated condition number of any `Φ(xᵢ, 0)`.
pub const MAX_CONDITION: f64 = 1e12;

/// Marches `dp/dx = D̂ f(p, û(x))` from `p(0) = x0` over `m` uniform steps.
///
/// `input(x, side)` supplies `û`. Steps that contain a breakpoint (a jump in
/// `û`) are split there; the left piece ends on `Side::Left`, the right piece
/// starts on `Side::Right`.
pub fn march_predictor<F>(
    model: &dyn PlantModel,
    x0: &State,
    dhat: f64,
    m: usize,
    input: F,
    breakpoints: &[f64],
) -> Result<GridProfile>
where
    F: Fn(f64, Side) -> f64,
{
    if x0.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: x0.len(),
        });
    }
    march(x0, dhat, m, |x, p, side| model.f(p, input(x, side)), breakpoints)
}

/// Fourth-order marching of `dp/dx = D̂ g(x, p)` over `m` uniform steps,
/// splitting steps at breakpoints.
pub(crate) fn march<G>(
    x0: &State,
    dhat: f64,
    m: usize,
    g: G,
    breakpoints: &[f64],
) -> Result<GridProfile>
where
    G: Fn(f64, &State, Side) -> State,
{
    if !(dhat > 0.0) {
        return Err(Error::Usage(format!("delay estimate must be positive, got {dhat}")));
    }
    let h = 1.0 / m as f64;
    let mut nodes = Vec::with_capacity(m + 1);
    let mut p = x0.clone();
    nodes.push(p.clone());
    let rhs = |x: f64, p: &State, side: Side| g(x, p, side) * dhat;
    let rk4 = |a: f64, b: f64, p: &State| -> State {
        let len = b - a;
        let k1 = rhs(a, p, Side::Right);
        let k2 = rhs(a + 0.5 * len, &(p + &k1 * (0.5 * len)), Side::Right);
        let k3 = rhs(a + 0.5 * len, &(p + &k2 * (0.5 * len)), Side::Right);
        let k4 = rhs(b, &(p + &k3 * len), Side::Left);
        p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (len / 6.0)
    };
    for i in 0..m {
        let a = i as f64 * h;
        let b = (i + 1) as f64 * h;
        let tol = 1e-12;
        let mut cuts: Vec<f64> = breakpoints
            .iter()
            .copied()
            .filter(|&c| c > a + tol && c < b - tol)
            .collect();
        cuts.sort_by(f64::total_cmp);
        let mut start = a;
        for c in cuts.into_iter().chain(std::iter::once(b)) {
            p = rk4(start, c, &p);
            start = c;
        }
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::PredictorEscape { x: b });
        }
        nodes.push(p.clone());
    }
    GridProfile::from_vectors(m, &nodes)
}

/// Predictor from a sampled `û` profile; `û` between nodes by cubic
/// interpolation.
pub fn compute_predictor(
    model: &dyn PlantModel,
    x: &State,
    uhat: &GridProfile,
    dhat: f64,
) -> Result<GridProfile> {
    march_predictor(model, x, dhat, uhat.m(), |s, _| uhat.interpolate(s)[0], &[])
}

/// `p̂_x = D̂ f(p̂, û)` at every node.
pub fn predictor_spatial_derivative(
    model: &dyn PlantModel,
    phat: &GridProfile,
    uhat: &GridProfile,
    dhat: f64,
) -> Result<GridProfile> {
    check_grids(phat, uhat)?;
    let nodes: Vec<_> = (0..phat.len())
        .map(|i| model.f(&phat.vector(i), uhat.at(i)) * dhat)
        .collect();
    GridProfile::from_vectors(phat.m(), &nodes)
}

fn check_grids(phat: &GridProfile, uhat: &GridProfile) -> Result<()> {
    if phat.m() != uhat.m() {
        return Err(Error::GridMismatch(format!(
            "predictor on M = {}, input on M = {}",
            phat.m(),
            uhat.m()
        )));
    }
    Ok(())
}

/// `Φ(xᵢ, 0)` at every node, with cached inverses.
#[derive(Debug, Clone)]
pub struct TransitionField {
    m: usize,
    matrices: Vec<DMatrix<f64>>,
    inverses: Vec<DMatrix<f64>>,
    max_condition: f64,
}

impl TransitionField {
    /// Builds a field from precomputed `Φ(xᵢ, 0)`.
    pub fn from_matrices(matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        let m = matrices.len().saturating_sub(1);
        let mut inverses = Vec::with_capacity(matrices.len());
        let mut max_condition: f64 = 1.0;
        for (node, phi) in matrices.iter().enumerate() {
            let sv = phi.clone().singular_values();
            let smax = sv.max();
            let smin = sv.min();
            let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
            if !(condition <= MAX_CONDITION) {
                return Err(Error::IllConditioned { node, condition });
            }
            max_condition = max_condition.max(condition);
            let inv = phi
                .clone()
                .try_inverse()
                .ok_or(Error::IllConditioned { node, condition })?;
            inverses.push(inv);
        }
        Ok(Self {
            m,
            matrices,
            inverses,
            max_condition,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    /// `Φ(xᵢ, 0)`.
    pub fn from_origin(&self, i: usize) -> &DMatrix<f64> {
        &self.matrices[i]
    }

    /// `Φ(xᵢ, 0)⁻¹ = Φ(0, xᵢ)`.
    pub fn to_origin(&self, i: usize) -> &DMatrix<f64> {
        &self.inverses[i]
    }

    pub fn max_condition(&self) -> f64 {
        self.max_condition
    }

    /// `Φ(xᵢ, xⱼ) = Φ(xᵢ, 0) Φ(xⱼ, 0)⁻¹`.
    pub fn between(&self, i: usize, j: usize) -> DMatrix<f64> {
        &self.matrices[i] * &self.inverses[j]
    }

    /// `∫₀^{xᵢ} Φ(xᵢ, y) g(y) dy` at every node, by the composite trapezoid
    /// rule on the grid.
    pub fn transported_integral(&self, integrand: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let h = 1.0 / self.m as f64;
        let n = self.dim();
        let mut acc = DVector::zeros(n);
        let mut prev = &self.inverses[0] * &integrand[0];
        let mut out = Vec::with_capacity(self.m + 1);
        out.push(DVector::zeros(n));
        for ((inv, phi), g) in self.inverses.iter().zip(&self.matrices).zip(integrand).skip(1) {
            let cur = inv * g;
            acc += (&prev + &cur) * (0.5 * h);
            out.push(phi * &acc);
            prev = cur;
        }
        out
    }
}

/// `transition_between(field, x, y)` on grid nodes.
pub fn transition_between(field: &TransitionField, i: usize, j: usize) -> DMatrix<f64> {
    field.between(i, j)
}

/// Marches `dΦ/dx = D̂ ∂f/∂p̂(p̂(x), û(x)) Φ`, `Φ(0, 0) = I`, with fourth-order
/// steps; midpoint values of `p̂` and `û` by cubic interpolation.
pub fn compute_transition_field(
    model: &dyn PlantModel,
    phat: &GridProfile,
    uhat: &GridProfile,
    dhat: f64,
) -> Result<TransitionField> {
    check_grids(phat, uhat)?;
    let m = phat.m();
    let n = model.dim();
    let h = 1.0 / m as f64;
    let jac = |x: f64| -> DMatrix<f64> {
        model.df_dx(&phat.interpolate(x), uhat.interpolate(x)[0]) * dhat
    };
    let at_node = |i: usize| model.df_dx(&phat.vector(i), uhat.at(i)) * dhat;
    let mut phi = DMatrix::identity(n, n);
    let mut matrices = Vec::with_capacity(m + 1);
    matrices.push(phi.clone());
    let mut a0 = at_node(0);
    for i in 0..m {
        let xm = (i as f64 + 0.5) * h;
        let am = jac(xm);
        let a1 = at_node(i + 1);
        let k1 = &a0 * &phi;
        let k2 = &am * (&phi + &k1 * (0.5 * h));
        let k3 = &am * (&phi + &k2 * (0.5 * h));
        let k4 = &a1 * (&phi + &k3 * h);
        phi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if !phi.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericOverflow("transition matrix".into()));
        }
        matrices.push(phi.clone());
        a0 = a1;
    }
    TransitionField::from_matrices(matrices)
}

/// Fields needed by the analytic predictor time derivative.
#[derive(Debug, Clone, Copy)]
pub struct PredictorRateInputs<'a> {
    pub phat: &'a GridProfile,
    pub uhat: &'a GridProfile,
    /// `û_x` at every node (equivalently `ŵ_x + κ'(p̂)·p̂_x`).
    pub uhat_x: &'a GridProfile,
    pub transition: &'a TransitionField,
    pub estimate: DelayEstimate,
    /// `f(p̂(0), u(0)) − f(p̂(0), û(0))`.
    pub f_utilde: &'a State,
}

/// `∫₀ˣ Φ(x, y)[f(p̂, û) + ∂f/∂û (y − 1) û_x] dy` at every node.
pub fn predictor_forcing_integral(
    model: &dyn PlantModel,
    phat: &GridProfile,
    uhat: &GridProfile,
    uhat_x: &GridProfile,
    transition: &TransitionField,
) -> Vec<DVector<f64>> {
    let integrand: Vec<_> = (0..phat.len())
        .map(|i| {
            let p = phat.vector(i);
            let u = uhat.at(i);
            model.f(&p, u) + model.df_du(&p, u) * ((phat.x(i) - 1.0) * uhat_x.at(i))
        })
        .collect();
    transition.transported_integral(&integrand)
}

/// `p̂_t = (1/D̂)[p̂_x + Φ(x, 0) D̂ f_ũ + Ḋ̂ D̂ ∫₀ˣ Φ(x, y)(...) dy]`.
pub fn compute_predictor_time_derivative(
    model: &dyn PlantModel,
    inputs: PredictorRateInputs<'_>,
) -> Result<GridProfile> {
    let PredictorRateInputs { phat, uhat, uhat_x, transition, estimate, f_utilde } = inputs;
    check_grids(phat, uhat)?;
    let integral = predictor_forcing_integral(model, phat, uhat, uhat_x, transition);
    let d = estimate.value;
    let nodes: Vec<_> = (0..phat.len())
        .map(|i| {
            let px = model.f(&phat.vector(i), uhat.at(i)) * d;
            (px + transition.from_origin(i) * f_utilde * d + &integral[i] * (estimate.rate * d)) / d
        })
        .collect();
    GridProfile::from_vectors(phat.m(), &nodes)
}
