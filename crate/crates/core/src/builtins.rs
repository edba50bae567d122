//! Ready-made systems with their boundary couplings.
//!
//! * `linear_damped_scalar`: `u_t + c u_x = −a u`, `u(t, 0) = h(t)`.
//! * `linear_reflect_2x2`: speeds `∓c`, no source, `u₁ = h₁ + k u₂` at
//!   `x = L`, `u₂ = h₂ + k u₁` at `x = 0`.
//! * `quasilinear_euler_damping`: isentropic Euler with linear friction in
//!   Riemann invariants about the state at rest, with the same reflecting
//!   boundary coupling (plus an optional quadratic term).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::boundary::{BoundaryMap, BoundarySpec, Signal};
use crate::error::{Error, Result};
use crate::system::SystemSpec;

pub fn linear_damped_scalar(speed: f64, damping: f64, length: f64, radius: f64) -> Result<SystemSpec> {
    if speed == 0.0 {
        return Err(Error::InvalidArgument("speed must be nonzero".into()));
    }
    let m = usize::from(speed < 0.0);
    Ok(SystemSpec::new(
        1,
        m,
        move |_| DMatrix::from_element(1, 1, speed),
        move |u| DVector::from_element(1, -damping * u[0]),
        radius,
        length,
    )?
    .with_source_jacobian(move |_| DMatrix::from_element(1, 1, -damping)))
}

/// Dirichlet data `u = h` at the inflow end.
pub fn scalar_inflow(spec: &SystemSpec, h: Arc<dyn Signal>, period: f64) -> Result<BoundarySpec> {
    let map = BoundaryMap::linear(Vec::new());
    if spec.m == 0 {
        BoundarySpec::new(1, 0, vec![map], Vec::new(), vec![h], period)
    } else {
        BoundarySpec::new(1, 1, Vec::new(), vec![map], vec![h], period)
    }
}

pub fn linear_reflect(speed: f64, length: f64, radius: f64) -> Result<SystemSpec> {
    if !(speed > 0.0) {
        return Err(Error::InvalidArgument("speed must be positive".into()));
    }
    Ok(SystemSpec::new(
        2,
        1,
        move |_| DMatrix::from_row_slice(2, 2, &[-speed, 0.0, 0.0, speed]),
        |_| DVector::zeros(2),
        radius,
        length,
    )?
    .with_source_jacobian(|_| DMatrix::zeros(2, 2)))
}

/// `u₁ = h₁ + k u₂ + q u₂²` at `x = L`, `u₂ = h₂ + k u₁ + q u₁²` at `x = 0`.
pub fn reflecting_boundary(
    gain: f64,
    quadratic: f64,
    h1: Arc<dyn Signal>,
    h2: Arc<dyn Signal>,
    period: f64,
) -> Result<BoundarySpec> {
    let map = move || {
        BoundaryMap::new(move |h, u: &[f64]| h + gain * u[0] + quadratic * u[0] * u[0])
            .with_linearization(1.0, vec![gain])
    };
    BoundarySpec::new(2, 1, vec![map()], vec![map()], vec![h1, h2], period)
}

/// Parameters of the damped isentropic Euler builtin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerParams {
    pub gamma: f64,
    pub damping: f64,
    pub sound_speed: f64,
}

impl Default for EulerParams {
    fn default() -> Self {
        Self { gamma: 1.4, damping: 0.5, sound_speed: 2.0 }
    }
}

/// `u₁ = z − z̄`, `u₂ = w − w̄` with `z, w = v ∓ 2c/(γ−1)`, so that
/// `v = (u₁ + u₂)/2`, `c = c̄ + (γ−1)(u₂ − u₁)/4`, `A = diag(v − c, v + c)`
/// and `F = −a v (1, 1)`.
pub fn quasilinear_euler(p: EulerParams, length: f64, radius: f64) -> Result<SystemSpec> {
    let EulerParams { gamma, damping, sound_speed } = p;
    if !(gamma > 1.0) || !(sound_speed > 0.0) || !(damping >= 0.0) {
        return Err(Error::InvalidArgument(format!("need γ > 1, c̄ > 0, a ≥ 0; got {p:?}")));
    }
    let vc = move |u: &[f64]| {
        let v = 0.5 * (u[0] + u[1]);
        let c = sound_speed + 0.25 * (gamma - 1.0) * (u[1] - u[0]);
        (v, c)
    };
    Ok(SystemSpec::new(
        2,
        1,
        move |u| {
            let (v, c) = vc(u);
            DMatrix::from_row_slice(2, 2, &[v - c, 0.0, 0.0, v + c])
        },
        move |u| {
            let (v, _) = vc(u);
            DVector::from_element(2, -damping * v)
        },
        radius,
        length,
    )?
    .with_source_jacobian(move |_| DMatrix::from_element(2, 2, -0.5 * damping)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::Harmonics;
    use crate::system::{minimal_k, validate_hyperbolicity, SourceLinearization};

    #[test]
    fn builtins_satisfy_the_hypotheses() {
        for spec in [
            linear_damped_scalar(1.0, 0.5, 1.0, 0.5).unwrap(),
            linear_reflect(1.0, 1.0, 0.5).unwrap(),
            quasilinear_euler(EulerParams::default(), 1.0, 0.3).unwrap(),
        ] {
            let r = validate_hyperbolicity(&spec, 64).unwrap();
            assert!(r.all_hold(), "{r:?}");
            SourceLinearization::new(&spec, None).unwrap();
        }
    }

    #[test]
    fn euler_needs_positive_k() {
        let spec = quasilinear_euler(EulerParams::default(), 1.0, 0.3).unwrap();
        let g0 = spec.source_jacobian(&[0.0, 0.0]);
        assert_eq!(minimal_k(&g0), 0.0);
        assert!(SourceLinearization::new(&spec, Some(0.0)).is_err());
        // analytic and numerical Jacobians agree
        let fd = linear_reflect(1.0, 1.0, 0.5).unwrap();
        assert_eq!(fd.source_jacobian(&[0.1, 0.0]), DMatrix::zeros(2, 2));
    }

    #[test]
    fn reflection_theta_is_the_gain() {
        let z: Arc<dyn Signal> = Arc::new(Harmonics::zero(2.0));
        let b = reflecting_boundary(0.5, 0.3, z.clone(), z, 2.0).unwrap();
        assert!((b.theta_data().unwrap().theta - 0.5).abs() < 1e-12);
    }
}
