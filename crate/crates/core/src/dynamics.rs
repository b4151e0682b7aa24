//! Right-hand sides of the time-varying closed loop.
//!
//! The RMSprop loop runs `2n + 1` states per variable:
//!
//! ```text
//! dθ̂_i/dt = -k ĝ_i / (sqrt(v̂_i) + ε)
//! dv̂_i/dt = ω_l,i (ĝ_i² - v̂_i)
//! dξ/dt   = ω_ξ (y - ξ),        y = J(θ̂ + s(t))
//! ĝ_i     = m_i(t) (y - ξ)
//! ```
//!
//! The gradient baseline replaces the parameter law with `dθ̂_i/dt = -k ĝ_i`
//! and keeps the same washout filter.

use std::ops::Range;

use thiserror::Error;

use crate::cost::CostFunction;
use crate::integrate::OdeSystem;
use crate::signals::DitherConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("{what} has {got} components, expected {expected}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("gain {name} must be positive and finite, got {value}")]
    InvalidGain { name: &'static str, value: f64 },
    #[error("v̂ component {index} is negative ({value})")]
    NegativeV { index: usize, value: f64 },
}

/// Loop gains.
#[derive(Debug, Clone, PartialEq)]
pub struct EscParams {
    pub k: f64,
    pub epsilon: f64,
    pub omega_l: Vec<f64>,
    pub omega_xi: f64,
}

fn positive(name: &'static str, value: f64) -> Result<(), DynamicsError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(DynamicsError::InvalidGain { name, value })
    }
}

impl EscParams {
    pub fn new(k: f64, epsilon: f64, omega_l: Vec<f64>, omega_xi: f64) -> Result<Self, DynamicsError> {
        positive("k", k)?;
        positive("epsilon", epsilon)?;
        for &w in &omega_l {
            positive("omega_l", w)?;
        }
        positive("omega_xi", omega_xi)?;
        Ok(Self { k, epsilon, omega_l, omega_xi })
    }

    /// Gains of the quartic reference run: k = 1, ε = 0.05, ω_l = 1/4, ω_ξ = 1.
    pub fn reference(dim: usize) -> Self {
        Self { k: 1.0, epsilon: 0.05, omega_l: vec![0.25; dim], omega_xi: 1.0 }
    }

    pub fn dim(&self) -> usize {
        self.omega_l.len()
    }
}

/// Full loop state `(θ̂, v̂, ξ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EscState {
    pub theta_hat: Vec<f64>,
    pub v_hat: Vec<f64>,
    pub xi: f64,
}

impl EscState {
    pub fn new(theta_hat: Vec<f64>, v_hat: Vec<f64>, xi: f64) -> Result<Self, DynamicsError> {
        let state = Self { theta_hat, v_hat, xi };
        state.validate(state.theta_hat.len())?;
        Ok(state)
    }

    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn validate(&self, dim: usize) -> Result<(), DynamicsError> {
        check_len("theta_hat", dim, self.theta_hat.len())?;
        check_len("v_hat", dim, self.v_hat.len())?;
        if let Some((index, &value)) = self.v_hat.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(DynamicsError::NegativeV { index, value });
        }
        Ok(())
    }

    /// Flattened `[θ̂_1..θ̂_n, v̂_1..v̂_n, ξ]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.dim() + 1);
        out.extend_from_slice(&self.theta_hat);
        out.extend_from_slice(&self.v_hat);
        out.push(self.xi);
        out
    }

    pub fn from_slice(x: &[f64]) -> Self {
        let n = (x.len() - 1) / 2;
        Self { theta_hat: x[..n].to_vec(), v_hat: x[n..2 * n].to_vec(), xi: x[2 * n] }
    }
}

/// Time derivative of an [`EscState`].
#[derive(Debug, Clone, PartialEq)]
pub struct EscRate {
    pub theta: Vec<f64>,
    pub v: Vec<f64>,
    pub xi: f64,
}

/// Time derivative of the gradient baseline `(θ̂, ξ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GescRate {
    pub theta: Vec<f64>,
    pub xi: f64,
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), DynamicsError> {
    if expected == got {
        Ok(())
    } else {
        Err(DynamicsError::DimensionMismatch { what, expected, got })
    }
}

fn check_setup(cost: &CostFunction, dither: &DitherConfig, theta: &[f64]) -> Result<(), DynamicsError> {
    check_len("dither", cost.dim(), dither.dim())?;
    check_len("theta_hat", cost.dim(), theta.len())
}

/// Measured output `y = J(θ̂ + s(t))`.
fn measure(t: f64, theta_hat: &[f64], cost: &CostFunction, dither: &DitherConfig, probe: &mut [f64]) -> f64 {
    dither.dither_into(t, probe);
    for (p, th) in probe.iter_mut().zip(theta_hat) {
        *p += th;
    }
    cost.value(probe)
}

/// Fills `g` with `ĝ_i = m_i(t) (y - ξ)` and returns `y`.
fn estimate_into(
    t: f64,
    theta_hat: &[f64],
    xi: f64,
    cost: &CostFunction,
    dither: &DitherConfig,
    scratch: &mut [f64],
    g: &mut [f64],
) -> f64 {
    let y = measure(t, theta_hat, cost, dither, scratch);
    dither.demod_into(t, g);
    for gi in g.iter_mut() {
        *gi *= y - xi;
    }
    y
}

/// Gradient estimate `ĝ(t, θ̂, ξ)`.
pub fn grad_estimate(
    t: f64,
    theta_hat: &[f64],
    xi: f64,
    cost: &CostFunction,
    dither: &DitherConfig,
) -> Result<Vec<f64>, DynamicsError> {
    check_setup(cost, dither, theta_hat)?;
    let n = cost.dim();
    let mut scratch = vec![0.0; n];
    let mut g = vec![0.0; n];
    estimate_into(t, theta_hat, xi, cost, dither, &mut scratch, &mut g);
    Ok(g)
}

/// RMSprop loop derivative at `(t, state)`.
pub fn rmspesc_rhs(
    t: f64,
    state: &EscState,
    params: &EscParams,
    cost: &CostFunction,
    dither: &DitherConfig,
) -> Result<EscRate, DynamicsError> {
    check_setup(cost, dither, &state.theta_hat)?;
    check_len("omega_l", cost.dim(), params.dim())?;
    state.validate(cost.dim())?;
    let sys = RmspescSystem { cost, dither, params };
    let x = state.to_vec();
    let mut dx = vec![0.0; x.len()];
    sys.rhs(t, &x, &mut dx);
    let n = cost.dim();
    Ok(EscRate { theta: dx[..n].to_vec(), v: dx[n..2 * n].to_vec(), xi: dx[2 * n] })
}

/// Gradient-baseline derivative at `(t, θ̂, ξ)`.
pub fn gesc_rhs(
    t: f64,
    theta_hat: &[f64],
    xi: f64,
    params: &EscParams,
    cost: &CostFunction,
    dither: &DitherConfig,
) -> Result<GescRate, DynamicsError> {
    check_setup(cost, dither, theta_hat)?;
    let n = cost.dim();
    let mut g = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let y = estimate_into(t, theta_hat, xi, cost, dither, &mut scratch, &mut g);
    Ok(GescRate { theta: g.iter().map(|gi| -params.k * gi).collect(), xi: params.omega_xi * (y - xi) })
}

/// RMSprop loop as an [`OdeSystem`] over the flattened state.
///
/// Stage states inside an RK step may dip slightly below zero in `v̂`; the
/// square root sees `max(v̂, 0)` and the integrator clamps after the step.
#[derive(Debug, Clone, Copy)]
pub struct RmspescSystem<'a> {
    pub cost: &'a CostFunction,
    pub dither: &'a DitherConfig,
    pub params: &'a EscParams,
}

impl OdeSystem for RmspescSystem<'_> {
    fn dim(&self) -> usize {
        2 * self.cost.dim() + 1
    }

    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        let n = self.cost.dim();
        let (theta, rest) = x.split_at(n);
        let (v, xi) = (&rest[..n], rest[n]);
        let (d_theta, d_rest) = dx.split_at_mut(n);
        let mut probe = vec![0.0; n];
        // ĝ lands in d_theta first, then gets scaled in place
        let y = estimate_into(t, theta, xi, self.cost, self.dither, &mut probe, d_theta);
        let p = self.params;
        for i in 0..n {
            let g = d_theta[i];
            d_rest[i] = p.omega_l[i] * (g * g - v[i]);
            d_theta[i] = -p.k * g / (v[i].max(0.0).sqrt() + p.epsilon);
        }
        d_rest[n] = p.omega_xi * (y - xi);
    }

    fn nonnegative(&self) -> Range<usize> {
        let n = self.cost.dim();
        n..2 * n
    }

    fn label(&self) -> String {
        "rmspesc".into()
    }
}

/// Gradient baseline over the same flattened layout; `v̂` is carried along
/// unchanged so trajectories share one CSV schema.
#[derive(Debug, Clone, Copy)]
pub struct GescSystem<'a> {
    pub cost: &'a CostFunction,
    pub dither: &'a DitherConfig,
    pub params: &'a EscParams,
}

impl OdeSystem for GescSystem<'_> {
    fn dim(&self) -> usize {
        2 * self.cost.dim() + 1
    }

    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        let n = self.cost.dim();
        let theta = &x[..n];
        let xi = x[2 * n];
        let mut probe = vec![0.0; n];
        let y = estimate_into(t, theta, xi, self.cost, self.dither, &mut probe, &mut dx[..n]);
        for d in dx[..n].iter_mut() {
            *d *= -self.params.k;
        }
        dx[n..2 * n].fill(0.0);
        dx[2 * n] = self.params.omega_xi * (y - xi);
    }

    fn label(&self) -> String {
        "gesc".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn quadratic_setup() -> (CostFunction, DitherConfig) {
        (CostFunction::scalar_quadratic(1.0, 0.0).unwrap(), DitherConfig::scalar(0.2, 1.0).unwrap())
    }

    #[test]
    fn estimate_vanishes_when_washout_matches_output() {
        let (cost, dither) = quadratic_setup();
        let t = 0.3;
        let y = cost.value(&[1.0 + dither.dither_value(t)[0]]);
        assert_eq!(grad_estimate(t, &[1.0], y, &cost, &dither).unwrap(), vec![0.0]);
    }

    #[test]
    fn estimate_by_substitution() {
        // ωt = π/2: s = 0.2, m = 10, y = J(1.2) = 0.72
        let (cost, dither) = quadratic_setup();
        let g = grad_estimate(PI / 2.0, &[1.0], 0.0, &cost, &dither).unwrap();
        assert_abs_diff_eq!(g[0], 7.2, epsilon = 1e-12);
    }

    #[test]
    fn estimate_is_affine_in_xi() {
        let cost = CostFunction::shifted_quartic(&[0.5, -1.0]).unwrap();
        let dither = DitherConfig::new(&[0.1, 0.05], &[1, 2], 3.0).unwrap();
        let t = 0.77;
        let theta = [0.2, 0.4];
        let (xi1, xi2) = (0.3, -1.1);
        let g1 = grad_estimate(t, &theta, xi1, &cost, &dither).unwrap();
        let g2 = grad_estimate(t, &theta, xi2, &cost, &dither).unwrap();
        let m = dither.demod_value(t);
        for i in 0..2 {
            assert_abs_diff_eq!(g1[i] - g2[i], m[i] * (xi2 - xi1), epsilon = 1e-12);
        }
    }

    #[test]
    fn rmspesc_rhs_by_substitution() {
        let (cost, dither) = quadratic_setup();
        let params = EscParams::new(1.0, 0.05, vec![0.25], 1.0).unwrap();
        let state = EscState::new(vec![1.0], vec![0.81], 0.0).unwrap();
        let rate = rmspesc_rhs(PI / 2.0, &state, &params, &cost, &dither).unwrap();
        assert_abs_diff_eq!(rate.theta[0], -7.2 / 0.95, epsilon = 1e-12);
        assert_abs_diff_eq!(rate.v[0], 0.25 * (51.84 - 0.81), epsilon = 1e-12);
        assert_abs_diff_eq!(rate.xi, 0.72, epsilon = 1e-12);
        assert_abs_diff_eq!(rate.v[0], 12.7575, epsilon = 1e-12);
    }

    #[test]
    fn gesc_rhs_by_substitution() {
        let (cost, dither) = quadratic_setup();
        let params = EscParams::new(1.0, 0.05, vec![0.25], 1.0).unwrap();
        let rate = gesc_rhs(PI / 2.0, &[1.0], 0.0, &params, &cost, &dither).unwrap();
        assert_abs_diff_eq!(rate.theta[0], -7.2, epsilon = 1e-12);
        // at t = 0 the demodulator is zero, so ĝ = 0
        assert_eq!(gesc_rhs(0.0, &[1.0], 0.0, &params, &cost, &dither).unwrap().theta, vec![0.0]);
        let state = EscState::new(vec![1.0], vec![0.81], 0.0).unwrap();
        for t in [0.1, 0.9, 2.3] {
            let full = rmspesc_rhs(t, &state, &params, &cost, &dither).unwrap();
            let base = gesc_rhs(t, &[1.0], 0.0, &params, &cost, &dither).unwrap();
            assert_eq!(full.xi, base.xi);
        }
    }

    #[test]
    fn negative_v_is_rejected() {
        let (cost, dither) = quadratic_setup();
        let params = EscParams::reference(1);
        let state = EscState { theta_hat: vec![1.0], v_hat: vec![-1e-3], xi: 0.0 };
        assert!(matches!(
            rmspesc_rhs(0.0, &state, &params, &cost, &dither),
            Err(DynamicsError::NegativeV { index: 0, .. })
        ));
        assert!(EscState::new(vec![0.0], vec![-1.0], 0.0).is_err());
    }

    #[test]
    fn v_orthant_is_forward_invariant() {
        let (cost, dither) = quadratic_setup();
        let params = EscParams::reference(1);
        // ĝ = 0 at t = 0 (m = 0): v̂ = 0 stays put
        let still = EscState::new(vec![1.0], vec![0.0], 0.0).unwrap();
        assert_eq!(rmspesc_rhs(0.0, &still, &params, &cost, &dither).unwrap().v[0], 0.0);
        // ĝ ≠ 0: v̂ = 0 is pushed up
        assert!(rmspesc_rhs(0.4, &still, &params, &cost, &dither).unwrap().v[0] > 0.0);
    }

    #[test]
    fn rhs_is_periodic_in_time() {
        let cost = CostFunction::quartic();
        let dither = DitherConfig::scalar(0.02, 10.0).unwrap();
        let params = EscParams::reference(1);
        let state = EscState::new(vec![1.3], vec![0.4], 0.2).unwrap();
        for j in 0..20 {
            let t = 0.05 * j as f64;
            let a = rmspesc_rhs(t, &state, &params, &cost, &dither).unwrap();
            let b = rmspesc_rhs(t + dither.period(), &state, &params, &cost, &dither).unwrap();
            assert_abs_diff_eq!(a.theta[0], b.theta[0], epsilon = 1e-9);
            assert_abs_diff_eq!(a.v[0], b.v[0], epsilon = 1e-7);
            assert_abs_diff_eq!(a.xi, b.xi, epsilon = 1e-12);
        }
    }

    #[test]
    fn gain_validation() {
        assert!(matches!(EscParams::new(0.0, 0.05, vec![0.25], 1.0), Err(DynamicsError::InvalidGain { name: "k", .. })));
        assert!(EscParams::new(1.0, -0.05, vec![0.25], 1.0).is_err());
        assert!(EscParams::new(1.0, 0.05, vec![0.0], 1.0).is_err());
        assert!(EscParams::new(1.0, 0.05, vec![0.25], f64::NAN).is_err());
    }

    #[test]
    fn state_flattening_round_trips() {
        let s = EscState::new(vec![1.0, 2.0], vec![0.5, 0.25], -3.0).unwrap();
        assert_eq!(EscState::from_slice(&s.to_vec()), s);
    }
}
