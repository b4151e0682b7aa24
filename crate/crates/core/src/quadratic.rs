//! Closed-form analysis of the scalar quadratic `J = J* + ½Hθ²`.
//!
//! Under the dither `a sin φ` the output is a three-term trigonometric series
//! `J(θ̂ + a sin φ) = b₀ + b₁ sin φ + b₂ cos 2φ`, which makes every average
//! map and the linearization at the equilibrium explicit.

use thiserror::Error;

use crate::dynamics::{check_len, DynamicsError, EscParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadraticError {
    #[error("curvature must be positive and finite, got {0}")]
    InvalidCurvature(f64),
    #[error("dither amplitude must be nonzero and finite, got {0}")]
    InvalidAmplitude(f64),
    #[error("optimal value must be finite, got {0}")]
    InvalidOffset(f64),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticModel {
    h: f64,
    j_opt: f64,
    a: f64,
}

impl QuadraticModel {
    pub fn new(h: f64, j_opt: f64, a: f64) -> Result<Self, QuadraticError> {
        if !(h.is_finite() && h > 0.0) {
            return Err(QuadraticError::InvalidCurvature(h));
        }
        if !j_opt.is_finite() {
            return Err(QuadraticError::InvalidOffset(j_opt));
        }
        if !(a.is_finite() && a != 0.0) {
            return Err(QuadraticError::InvalidAmplitude(a));
        }
        Ok(Self { h, j_opt, a })
    }

    pub fn curvature(&self) -> f64 {
        self.h
    }

    pub fn j_opt(&self) -> f64 {
        self.j_opt
    }

    pub fn amplitude(&self) -> f64 {
        self.a
    }

    pub fn value(&self, theta: f64) -> f64 {
        self.j_opt + 0.5 * self.h * theta * theta
    }

    /// `ξ* = b₀(0)`.
    pub fn xi_star(&self) -> f64 {
        fourier_coeffs(self, 0.0).b0
    }

    /// `v* = a²H²/16`.
    pub fn v_star(&self) -> f64 {
        self.a * self.a * self.h * self.h / 16.0
    }
}

/// Coefficients of `b₀ + b₁ sin φ + b₂ cos 2φ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourierCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
}

impl FourierCoeffs {
    pub fn eval(&self, phase: f64) -> f64 {
        self.b0 + self.b1 * phase.sin() + self.b2 * (2.0 * phase).cos()
    }
}

pub fn fourier_coeffs(model: &QuadraticModel, theta_hat: f64) -> FourierCoeffs {
    let QuadraticModel { h, j_opt, a } = *model;
    FourierCoeffs {
        b0: j_opt + 0.5 * h * theta_hat * theta_hat + 0.25 * a * a * h,
        b1: a * h * theta_hat,
        b2: -0.25 * a * a * h,
    }
}

/// `(ḡ, ḡ²)` at `(θ̄, ξ̄)`.
pub fn quad_avg_maps(model: &QuadraticModel, theta_bar: f64, xi_bar: f64) -> (f64, f64) {
    let FourierCoeffs { b0, b1, b2 } = fourier_coeffs(model, theta_bar);
    let a2 = model.a * model.a;
    let level = b0 - 0.5 * b2 - xi_bar;
    let g2 = 4.0 / a2 * (0.5 * level * level + 1.5 * (0.5 * b1).powi(2) + 0.5 * (0.5 * b2).powi(2));
    (model.h * theta_bar, g2)
}

/// Linearization of the averaged system at its equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianReport {
    /// Rows and columns ordered `(θ̄ᵉ, ξ̄ᵉ, v̄ᵉ)`.
    pub matrix: [[f64; 3]; 3],
    pub eigenvalues: [f64; 3],
    pub hurwitz: bool,
    /// Limit of the `(1,1)` entry as `H → ∞`: `-4k/|a|`.
    pub large_curvature_limit: f64,
    /// Small-curvature approximation of the `(1,1)` entry: `-(k/ε)H`.
    pub small_curvature_approx: f64,
}

/// Jacobian for a single channel with filter gain `omega_l`.
pub fn channel_jacobian(model: &QuadraticModel, k: f64, epsilon: f64, omega_l: f64, omega_xi: f64) -> JacobianReport {
    let (h, a) = (model.h, model.a.abs());
    let theta = -k * h / (0.25 * a * h + epsilon);
    let matrix = [[theta, 0.0, 0.0], [0.0, -omega_xi, 0.0], [0.0, -0.5 * omega_l * h, -omega_l]];
    let eigenvalues = [matrix[0][0], matrix[1][1], matrix[2][2]];
    JacobianReport {
        matrix,
        eigenvalues,
        hurwitz: eigenvalues.iter().all(|e| *e < 0.0),
        large_curvature_limit: -4.0 * k / a,
        small_curvature_approx: -k / epsilon * h,
    }
}

/// Jacobian for the scalar loop; `params` must be one-dimensional.
pub fn quad_jacobian(model: &QuadraticModel, params: &EscParams) -> Result<JacobianReport, QuadraticError> {
    check_len("omega_l", 1, params.dim())?;
    Ok(channel_jacobian(model, params.k, params.epsilon, params.omega_l[0], params.omega_xi))
}

/// Scalar analysis applied channel by channel to `J* + Σ ½H_i θ_i²` with
/// amplitudes `a_i`.
pub fn diagonal_jacobians(
    curvatures: &[f64],
    j_opt: f64,
    amplitudes: &[f64],
    params: &EscParams,
) -> Result<Vec<JacobianReport>, QuadraticError> {
    check_len("amplitudes", curvatures.len(), amplitudes.len())?;
    check_len("omega_l", curvatures.len(), params.dim())?;
    curvatures
        .iter()
        .zip(amplitudes)
        .zip(&params.omega_l)
        .map(|((&h, &a), &wl)| {
            let model = QuadraticModel::new(h, j_opt, a)?;
            Ok(channel_jacobian(&model, params.k, params.epsilon, wl, params.omega_xi))
        })
        .collect()
}
