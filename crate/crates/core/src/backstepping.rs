//! Backstepping change of variable `ŵ = û − κ(p̂)` and its inverse.

use crate::error::{Error, Result};
use crate::history::ControlHistory;
use crate::plant::{Controller, PlantModel, State};
use crate::predictor::march;
use crate::profile::GridProfile;

/// `ŵ(xᵢ) = û(xᵢ) − κ(p̂(xᵢ))`.
pub fn forward_transform(
    controller: &dyn Controller,
    uhat: &GridProfile,
    phat: &GridProfile,
) -> Result<GridProfile> {
    if uhat.m() != phat.m() {
        return Err(Error::GridMismatch(format!(
            "input on M = {}, predictor on M = {}",
            uhat.m(),
            phat.m()
        )));
    }
    let values = (0..uhat.len())
        .map(|i| uhat.at(i) - controller.kappa(&phat.vector(i)))
        .collect();
    GridProfile::scalar(uhat.m(), values)
}

/// Recovers `(û, p̂)` from `ŵ`: march `dp̂/dx = D̂ f(p̂, ŵ + κ(p̂))` from
/// `p̂(0) = X`, then set `û = ŵ + κ(p̂)`. `ŵ` between nodes by cubic
/// interpolation.
pub fn inverse_transform(
    model: &dyn PlantModel,
    controller: &dyn Controller,
    x: &State,
    what: &GridProfile,
    dhat: f64,
) -> Result<(GridProfile, GridProfile)> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: x.len(),
        });
    }
    let phat = march(
        x,
        dhat,
        what.m(),
        |s, p, _| model.f(p, what.interpolate(s)[0] + controller.kappa(p)),
        &[],
    )?;
    let uhat = (0..what.len())
        .map(|i| what.at(i) + controller.kappa(&phat.vector(i)))
        .collect();
    Ok((GridProfile::scalar(what.m(), uhat)?, phat))
}

/// `|U(t) − κ(p̂(1, t))|`, i.e. `|ŵ(1, t)|` when `û(1, t) = U(t)`.
pub fn boundary_check(
    history: &ControlHistory,
    controller: &dyn Controller,
    phat: &GridProfile,
    t: f64,
) -> Result<f64> {
    let u = history.sample(t)?;
    Ok((u - controller.kappa(&phat.vector(phat.m()))).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{Integrator, LinearFeedback};
    use crate::predictor::compute_predictor;

    fn s(v: f64) -> State {
        State::from_element(1, v)
    }

    #[derive(Debug)]
    struct ZeroFeedback;

    impl Controller for ZeroFeedback {
        fn kappa(&self, _x: &State) -> f64 {
            0.0
        }
        fn dkappa(&self, x: &State) -> State {
            State::zeros(x.len())
        }
        fn d2kappa(&self, x: &State) -> nalgebra::DMatrix<f64> {
            nalgebra::DMatrix::zeros(x.len(), x.len())
        }
        fn d3kappa_along(&self, x: &State, _v: &State) -> nalgebra::DMatrix<f64> {
            nalgebra::DMatrix::zeros(x.len(), x.len())
        }
    }

    #[test]
    fn zero_feedback_leaves_input_unchanged() {
        let uh = GridProfile::from_fn(16, |x| x.cos());
        let ph = GridProfile::from_fn(16, |x| 1.0 + x);
        assert_eq!(forward_transform(&ZeroFeedback, &uh, &ph).unwrap(), uh);

        let (u, _) = inverse_transform(&Integrator, &ZeroFeedback, &s(1.0), &uh, 0.5).unwrap();
        assert_eq!(u, uh);
    }

    #[test]
    fn input_matching_feedback_gives_zero() {
        let k = LinearFeedback::new(&[1.0]);
        let ph = GridProfile::from_fn(16, |x| (2.0 * x).sin());
        let uh = ph.map(|v| -v);
        assert!(forward_transform(&k, &uh, &ph).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn integrator_forward_closed_form() {
        // p̂ = 1 + cx, so ŵ = c + 1 + cx
        let k = LinearFeedback::new(&[1.0]);
        let c = 0.4;
        let uh = GridProfile::from_fn(32, |_| c);
        let ph = compute_predictor(&Integrator, &s(1.0), &uh, 1.0).unwrap();
        let w = forward_transform(&k, &uh, &ph).unwrap();
        for i in 0..=32 {
            assert!((w.at(i) - (c + 1.0 + c * w.x(i))).abs() < 1e-14);
        }
    }

    #[test]
    fn integrator_inverse_closed_form() {
        let k = LinearFeedback::new(&[1.0]);
        let w = GridProfile::zeros(100, 1);
        let (u, p) = inverse_transform(&Integrator, &k, &s(1.0), &w, 1.0).unwrap();
        for i in 0..=100 {
            let x = p.x(i);
            assert!((p.at(i) - (-x).exp()).abs() < 1e-9);
            assert!((u.at(i) + (-x).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn boundary_residual_examples() {
        let k = LinearFeedback::new(&[1.0]);
        let h = ControlHistory::from_fn(0.1, 1.0, |_| 1.0).unwrap();
        let ph = GridProfile::from_fn(8, |_| 0.5);
        assert!((boundary_check(&h, &k, &ph, 1.0).unwrap() - 1.5).abs() < 1e-15);
    }
}
