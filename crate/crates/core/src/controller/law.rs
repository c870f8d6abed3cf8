use nalgebra::DVector;

use super::gains::ControllerGains;
use crate::error::{check_len, Result};

/// `s = e_dot + Phi e`.
pub fn sliding_variable(e: &DVector<f64>, e_dot: &DVector<f64>, phi: &[f64]) -> Result<DVector<f64>> {
    check_len("e_dot", e_dot.len(), e.len())?;
    check_len("phi", phi.len(), e.len())?;
    Ok(DVector::from_fn(e.len(), |i, _| e_dot[i] + phi[i] * e[i]))
}

/// Continuous replacement of `s / |s|`: `x / max(1, |x|)` with `x = s / eps`.
pub fn saturate(s: &DVector<f64>, eps: f64) -> DVector<f64> {
    let x = s / eps;
    let norm = x.norm();
    if norm > 1.0 {
        x / norm
    } else {
        x
    }
}

/// Unit direction of `s`, zero at the origin.
fn unit(s: &DVector<f64>) -> DVector<f64> {
    let norm = s.norm();
    if norm > 0.0 {
        s / norm
    } else {
        DVector::zeros(s.len())
    }
}

/// Everything in the control input except the residual compensation:
/// `Mbar (chi_dd_d - Phi e_dot) - Lambda s - sigma_hat sat(s)`.
pub fn nominal_input(
    chi_dd_desired: &DVector<f64>,
    e_dot: &DVector<f64>,
    s: &DVector<f64>,
    sigma_hat: f64,
    gains: &ControllerGains,
) -> Result<DVector<f64>> {
    let n = gains.n();
    check_len("chi_dd_desired", chi_dd_desired.len(), n)?;
    check_len("e_dot", e_dot.len(), n)?;
    check_len("s", s.len(), n)?;
    let sw = if gains.boundary_layer { saturate(s, gains.epsilon_bl) } else { unit(s) };
    Ok(DVector::from_fn(n, |i, _| {
        gains.mbar[i] * (chi_dd_desired[i] - gains.phi[i] * e_dot[i]) - gains.lambda[i] * s[i] - sigma_hat * sw[i]
    }))
}

/// `tau = Mbar (chi_dd_d - Phi e_dot) - Lambda s + r_hat - sigma_hat sat(s)`.
pub fn control_input(
    chi_dd_desired: &DVector<f64>,
    e_dot: &DVector<f64>,
    s: &DVector<f64>,
    r_adapted: &DVector<f64>,
    sigma_hat: f64,
    gains: &ControllerGains,
) -> Result<DVector<f64>> {
    check_len("r_adapted", r_adapted.len(), gains.n())?;
    Ok(nominal_input(chi_dd_desired, e_dot, s, sigma_hat, gains)? + r_adapted)
}

/// Forward-Euler step of `sigma_hat' = |s| - nu sigma_hat`, floored.
pub fn adaptive_gain_step(sigma_hat: f64, s_norm: f64, nu: f64, dt: f64, floor: f64) -> f64 {
    (sigma_hat + dt * (s_norm - nu * sigma_hat)).max(floor)
}
