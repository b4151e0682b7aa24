//! Averaged dynamics of the RMSprop loop.
//!
//! Freezing `(θ̄, v̄, ξ̄)` and averaging the loop over one dither period gives
//! the autonomous system
//!
//! ```text
//! dθ̄_i/dt = -k ḡ_i(θ̄) / (sqrt(v̄_i) + ε)
//! dv̄_i/dt = ω_l,i ((ḡ²)_i(θ̄, ξ̄) - v̄_i)
//! dξ̄/dt   = ω_ξ (J̄(θ̄) - ξ̄)
//! ```
//!
//! with `J̄ = ⟨J(θ̄ + s)⟩`, `ḡ_i = ⟨m_i J(θ̄ + s)⟩` and
//! `(ḡ²)_i = ⟨(m_i (J(θ̄ + s) - ξ̄))²⟩`, where `⟨·⟩` is the mean over
//! `[0, T]`. The mean is a composite trapezoid on uniform nodes, which is
//! spectrally accurate for these smooth periodic integrands. `ḡ` is computed
//! without `ξ̄` because `⟨m_i⟩ = 0`.

use std::ops::Range;

use rayon::prelude::*;
use thiserror::Error;

use crate::cost::{CostError, CostFunction};
use crate::dynamics::{check_len, DynamicsError, EscParams, EscRate, EscState};
use crate::integrate::OdeSystem;
use crate::signals::{DitherConfig, DitherError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AveragingError {
    #[error("quadrature needs at least {minimum} nodes (8 per fastest harmonic), got {nodes}")]
    InvalidNodes { nodes: usize, minimum: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Dither(#[from] DitherError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("equilibrium search stalled after {iterations} iterations with |ḡ| = {grad_norm:e}")]
    NoConvergence { iterations: usize, grad_norm: f64 },
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
}

/// `J̄`, `ḡ` and `(ḡ²)` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct AverageMaps {
    pub j_bar: f64,
    pub g_bar: Vec<f64>,
    pub g2_bar: Vec<f64>,
    pub nodes: usize,
}

/// `(ḡ²)_i(θ̄, ξ_ref + η) = constant + linear η + quadratic η²`.
///
/// The squared estimate is exactly quadratic in the washout state, so one
/// quadrature pass per `θ̄` covers every `ξ̄`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WashoutQuadratic {
    pub constant: f64,
    pub linear: f64,
    pub quadratic: f64,
}

impl WashoutQuadratic {
    pub fn eval(&self, eta: f64) -> f64 {
        self.constant + eta * (self.linear + eta * self.quadratic)
    }

    /// `max |eval(η) - reference|` over `|η| ≤ half_width`.
    pub fn max_deviation(&self, reference: f64, half_width: f64) -> f64 {
        let at = |eta: f64| (self.eval(eta) - reference).abs();
        let mut best = at(-half_width).max(at(half_width));
        if self.quadratic != 0.0 {
            let vertex = -self.linear / (2.0 * self.quadratic);
            if vertex.abs() <= half_width {
                best = best.max(at(vertex));
            }
        }
        best
    }
}

/// Period averages of one cost under one dither, with the node table cached.
#[derive(Debug, Clone)]
pub struct Averager<'a> {
    cost: &'a CostFunction,
    dither: &'a DitherConfig,
    nodes: usize,
    dither_tab: Vec<f64>,
    demod_tab: Vec<f64>,
}

impl<'a> Averager<'a> {
    pub fn new(cost: &'a CostFunction, dither: &'a DitherConfig, nodes: usize) -> Result<Self, AveragingError> {
        check_len("dither", cost.dim(), dither.dim())?;
        let minimum = 8 * dither.r_max() as usize;
        if nodes < minimum {
            return Err(AveragingError::InvalidNodes { nodes, minimum });
        }
        let (dither_tab, demod_tab) = dither.period_table(nodes);
        Ok(Self { cost, dither, nodes, dither_tab, demod_tab })
    }

    /// `256 · r_max` nodes.
    pub fn with_default_nodes(cost: &'a CostFunction, dither: &'a DitherConfig) -> Result<Self, AveragingError> {
        Self::new(cost, dither, default_nodes(dither))
    }

    pub fn cost(&self) -> &'a CostFunction {
        self.cost
    }

    pub fn dither(&self) -> &'a DitherConfig {
        self.dither
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn dim(&self) -> usize {
        self.cost.dim()
    }

    /// `y_j = J(θ + s(t_j))` at every node.
    fn outputs(&self, theta: &[f64], y: &mut Vec<f64>) {
        let n = self.dim();
        let mut probe = vec![0.0; n];
        y.clear();
        for j in 0..self.nodes {
            for i in 0..n {
                probe[i] = theta[i] + self.dither_tab[j * n + i];
            }
            y.push(self.cost.value(&probe));
        }
    }

    fn maps_from_outputs(&self, y: &[f64], xi: f64) -> AverageMaps {
        let n = self.dim();
        let inv = 1.0 / self.nodes as f64;
        let mut g_bar = vec![0.0; n];
        let mut g2_bar = vec![0.0; n];
        let mut j_bar = 0.0;
        for (j, &yj) in y.iter().enumerate() {
            j_bar += yj;
            let residual = yj - xi;
            for i in 0..n {
                let m = self.demod_tab[j * n + i];
                g_bar[i] += m * yj;
                let g = m * residual;
                g2_bar[i] += g * g;
            }
        }
        g_bar.iter_mut().chain(g2_bar.iter_mut()).for_each(|v| *v *= inv);
        AverageMaps { j_bar: j_bar * inv, g_bar, g2_bar, nodes: self.nodes }
    }

    /// All three maps at `(θ̄, ξ̄)`; the point must have the cost's dimension.
    pub fn maps(&self, theta: &[f64], xi: f64) -> AverageMaps {
        let mut y = Vec::with_capacity(self.nodes);
        self.outputs(theta, &mut y);
        self.maps_from_outputs(&y, xi)
    }

    pub fn j_bar(&self, theta: &[f64]) -> f64 {
        let n = self.dim();
        let mut probe = vec![0.0; n];
        let mut acc = 0.0;
        for j in 0..self.nodes {
            for i in 0..n {
                probe[i] = theta[i] + self.dither_tab[j * n + i];
            }
            acc += self.cost.value(&probe);
        }
        acc / self.nodes as f64
    }

    pub fn g_bar(&self, theta: &[f64]) -> Vec<f64> {
        self.maps(theta, 0.0).g_bar
    }

    /// `(J̄(θ̄), per-channel (ḡ²)_i(θ̄, ξ_ref + η) as a quadratic in η)`.
    pub fn washout_quadratics(&self, theta: &[f64], xi_ref: f64) -> (f64, Vec<WashoutQuadratic>) {
        let n = self.dim();
        let mut y = Vec::with_capacity(self.nodes);
        self.outputs(theta, &mut y);
        let inv = 1.0 / self.nodes as f64;
        let mut out = vec![WashoutQuadratic { constant: 0.0, linear: 0.0, quadratic: 0.0 }; n];
        let mut j_bar = 0.0;
        for (j, &yj) in y.iter().enumerate() {
            j_bar += yj;
            let r = yj - xi_ref;
            for (i, q) in out.iter_mut().enumerate() {
                let m2 = self.demod_tab[j * n + i].powi(2);
                q.constant += m2 * r * r;
                q.linear -= 2.0 * m2 * r;
                q.quadratic += m2;
            }
        }
        for q in &mut out {
            q.constant *= inv;
            q.linear *= inv;
            q.quadratic *= inv;
        }
        (j_bar * inv, out)
    }
}

pub fn default_nodes(dither: &DitherConfig) -> usize {
    256 * dither.r_max() as usize
}

/// `J̄`, `ḡ`, `(ḡ²)` at `(θ̄, ξ̄)` with `nodes` quadrature points.
pub fn avg_maps(
    cost: &CostFunction,
    dither: &DitherConfig,
    theta_bar: &[f64],
    xi_bar: f64,
    nodes: usize,
) -> Result<AverageMaps, AveragingError> {
    let averager = Averager::new(cost, dither, nodes)?;
    check_len("theta_bar", cost.dim(), theta_bar.len())?;
    Ok(averager.maps(theta_bar, xi_bar))
}

/// Averaged system over the flattened `[θ̄, v̄, ξ̄]` layout.
#[derive(Debug, Clone)]
pub struct AverageSystem<'a> {
    pub averager: Averager<'a>,
    pub params: &'a EscParams,
}

impl<'a> AverageSystem<'a> {
    pub fn new(averager: Averager<'a>, params: &'a EscParams) -> Result<Self, AveragingError> {
        check_len("omega_l", averager.dim(), params.dim())?;
        Ok(Self { averager, params })
    }
}

impl OdeSystem for AverageSystem<'_> {
    fn dim(&self) -> usize {
        2 * self.averager.dim() + 1
    }

    fn rhs(&self, _t: f64, x: &[f64], dx: &mut [f64]) {
        let n = self.averager.dim();
        let (theta, v, xi) = (&x[..n], &x[n..2 * n], x[2 * n]);
        let maps = self.averager.maps(theta, xi);
        let p = self.params;
        for i in 0..n {
            dx[i] = -p.k * maps.g_bar[i] / (v[i].max(0.0).sqrt() + p.epsilon);
            dx[n + i] = p.omega_l[i] * (maps.g2_bar[i] - v[i]);
        }
        dx[2 * n] = p.omega_xi * (maps.j_bar - xi);
    }

    fn nonnegative(&self) -> Range<usize> {
        let n = self.averager.dim();
        n..2 * n
    }

    fn label(&self) -> String {
        "average".into()
    }
}

/// Averaged-system derivative at `state`.
pub fn average_rhs(
    state: &EscState,
    params: &EscParams,
    cost: &CostFunction,
    dither: &DitherConfig,
    nodes: usize,
) -> Result<EscRate, AveragingError> {
    state.validate(cost.dim())?;
    let system = AverageSystem::new(Averager::new(cost, dither, nodes)?, params)?;
    let x = state.to_vec();
    let mut dx = vec![0.0; x.len()];
    system.rhs(0.0, &x, &mut dx);
    let n = cost.dim();
    Ok(EscRate { theta: dx[..n].to_vec(), v: dx[n..2 * n].to_vec(), xi: dx[2 * n] })
}

/// Fixed point `(θ*, v*, ξ*)` of the averaged system.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub theta_star: Vec<f64>,
    pub xi_star: f64,
    pub v_star: Vec<f64>,
}

/// State measured from an [`Equilibrium`].
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorState {
    pub theta_err: Vec<f64>,
    pub v_err: Vec<f64>,
    pub xi_err: f64,
}

impl ErrorState {
    pub fn zero(dim: usize) -> Self {
        Self { theta_err: vec![0.0; dim], v_err: vec![0.0; dim], xi_err: 0.0 }
    }
}

impl Equilibrium {
    /// Completes `θ*` with `ξ* = J̄(θ*)` and `v*_i = (ḡ²)_i(θ*, ξ*)`.
    pub fn at(averager: &Averager, theta_star: &[f64]) -> Result<Self, AveragingError> {
        check_len("theta_star", averager.dim(), theta_star.len())?;
        let xi_star = averager.j_bar(theta_star);
        let v_star = averager.maps(theta_star, xi_star).g2_bar;
        Ok(Self { theta_star: theta_star.to_vec(), xi_star, v_star })
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    pub fn state(&self) -> EscState {
        EscState { theta_hat: self.theta_star.clone(), v_hat: self.v_star.clone(), xi: self.xi_star }
    }

    pub fn to_error_coords(&self, state: &EscState) -> Result<ErrorState, AveragingError> {
        let n = self.dim();
        check_len("theta", n, state.theta_hat.len())?;
        check_len("v", n, state.v_hat.len())?;
        Ok(ErrorState {
            theta_err: state.theta_hat.iter().zip(&self.theta_star).map(|(a, b)| a - b).collect(),
            v_err: state.v_hat.iter().zip(&self.v_star).map(|(a, b)| a - b).collect(),
            xi_err: state.xi - self.xi_star,
        })
    }

    /// Inverse of [`to_error_coords`](Self::to_error_coords), up to rounding
    /// in the subtraction/addition pair.
    pub fn from_error_coords(&self, err: &ErrorState) -> Result<EscState, AveragingError> {
        let n = self.dim();
        check_len("theta_err", n, err.theta_err.len())?;
        check_len("v_err", n, err.v_err.len())?;
        Ok(EscState {
            theta_hat: err.theta_err.iter().zip(&self.theta_star).map(|(a, b)| a + b).collect(),
            v_hat: err.v_err.iter().zip(&self.v_star).map(|(a, b)| a + b).collect(),
            xi: err.xi_err + self.xi_star,
        })
    }

    /// Flattened-state version of [`to_error_coords`](Self::to_error_coords).
    pub fn error_of(&self, x: &[f64]) -> ErrorState {
        let n = self.dim();
        ErrorState {
            theta_err: x[..n].iter().zip(&self.theta_star).map(|(a, b)| a - b).collect(),
            v_err: x[n..2 * n].iter().zip(&self.v_star).map(|(a, b)| a - b).collect(),
            xi_err: x[2 * n] - self.xi_star,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumOptions {
    /// Stop when `|ḡ| ≤ tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Quadrature nodes; `None` means `256 · r_max`.
    pub nodes: Option<usize>,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 100_000, nodes: None }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Finds `θ*` with `ḡ(θ*) ≈ 0` by descent on `J̄` along `-ḡ`, then completes
/// the equilibrium.
///
/// Steps grow by 2 after every accepted iterate and halve on rejection
/// (Armijo, `c = 1e-4`). The first time no step decreases `J̄` (rounding near
/// the minimum, or `ḡ` vanishing away from the minimizer of `J̄`) the
/// acceptance test switches for good to a decrease of `|ḡ|`.
pub fn equilibrium(
    cost: &CostFunction,
    dither: &DitherConfig,
    theta_init: &[f64],
    options: &EquilibriumOptions,
) -> Result<Equilibrium, AveragingError> {
    let nodes = options.nodes.unwrap_or_else(|| default_nodes(dither));
    let averager = Averager::new(cost, dither, nodes)?;
    check_len("theta_init", cost.dim(), theta_init.len())?;
    let theta = descend(&averager, theta_init, options)?;
    Equilibrium::at(&averager, &theta)
}

fn descend(averager: &Averager, start: &[f64], options: &EquilibriumOptions) -> Result<Vec<f64>, AveragingError> {
    const MAX_HALVINGS: usize = 200;
    let mut theta = start.to_vec();
    let mut value = averager.j_bar(&theta);
    let mut g = averager.g_bar(&theta);
    let mut g_norm = norm(&g);
    let mut step: f64 = 1.0;
    let mut on_gradient_norm = false;
    let mut trial = vec![0.0; theta.len()];
    let move_to = |alpha: f64, theta: &[f64], g: &[f64], trial: &mut Vec<f64>| {
        for i in 0..theta.len() {
            trial[i] = theta[i] - alpha * g[i];
        }
    };

    for _ in 0..options.max_iter {
        if g_norm <= options.tol {
            return Ok(theta);
        }
        let mut accepted = None;
        let mut alpha = (2.0 * step).min(1e12);
        if !on_gradient_norm {
            for _ in 0..MAX_HALVINGS {
                move_to(alpha, &theta, &g, &mut trial);
                let v = averager.j_bar(&trial);
                if v < value && v <= value - 1e-4 * alpha * g_norm * g_norm {
                    accepted = Some((alpha, v, averager.g_bar(&trial)));
                    break;
                }
                alpha *= 0.5;
            }
            on_gradient_norm = accepted.is_none();
        }
        if accepted.is_none() {
            alpha = (2.0 * step).min(1e12);
            for _ in 0..MAX_HALVINGS {
                move_to(alpha, &theta, &g, &mut trial);
                let gt = averager.g_bar(&trial);
                if norm(&gt) < g_norm {
                    accepted = Some((alpha, averager.j_bar(&trial), gt));
                    break;
                }
                alpha *= 0.5;
            }
        }
        let Some((alpha, v, gt)) = accepted else {
            return Err(AveragingError::NoConvergence { iterations: 0, grad_norm: g_norm });
        };
        step = alpha;
        theta.copy_from_slice(&trial);
        value = v;
        g = gt;
        g_norm = norm(&g);
    }
    if g_norm <= options.tol {
        Ok(theta)
    } else {
        Err(AveragingError::NoConvergence { iterations: options.max_iter, grad_norm: g_norm })
    }
}

/// One row of a small-amplitude sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub a0: f64,
    /// `|ḡ(θ̄) - ∇J(θ̄)|` at the probe point.
    pub grad_error: f64,
    /// `max_i v*_i` at the equilibrium for this amplitude.
    pub v_star_max: f64,
    pub equilibrium: Equilibrium,
}

/// Shrinks the dither (fixed channel ratios) through `a0_list` and records the
/// gradient-estimate error at `theta_bar` and the equilibrium `v*`.
///
/// The equilibrium search starts from the cost's known minimizer when it has
/// one, otherwise from `theta_bar`.
pub fn convergence_sweep(
    cost: &CostFunction,
    dither: &DitherConfig,
    theta_bar: &[f64],
    a0_list: &[f64],
    nodes: usize,
) -> Result<Vec<SweepRow>, AveragingError> {
    check_len("theta_bar", cost.dim(), theta_bar.len())?;
    check_len("dither", cost.dim(), dither.dim())?;
    if a0_list.is_empty() {
        return Err(AveragingError::InvalidSweep("no amplitudes given".into()));
    }
    if a0_list.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(AveragingError::InvalidSweep("amplitudes must be positive".into()));
    }
    if a0_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(AveragingError::InvalidSweep("amplitudes must be strictly decreasing".into()));
    }
    let true_grad = cost.grad(theta_bar)?;
    let start = cost.minimizer().unwrap_or(theta_bar).to_vec();
    let options = EquilibriumOptions { nodes: Some(nodes), ..EquilibriumOptions::default() };
    a0_list
        .par_iter()
        .map(|&a0| {
            let scaled = dither.scaled(a0)?;
            let averager = Averager::new(cost, &scaled, nodes)?;
            let g_bar = averager.g_bar(theta_bar);
            let grad_error = norm(&g_bar.iter().zip(&true_grad).map(|(a, b)| a - b).collect::<Vec<_>>());
            let equilibrium = equilibrium(cost, &scaled, &start, &options)?;
            let v_star_max = equilibrium.v_star.iter().copied().fold(0.0, f64::max);
            Ok(SweepRow { a0, grad_error, v_star_max, equilibrium })
        })
        .collect()
}
