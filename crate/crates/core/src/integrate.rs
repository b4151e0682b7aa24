//! Fixed-step classical Runge–Kutta integration with trajectory recording.

use std::ops::Range;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrateError {
    #[error("time span must satisfy t1 > t0, got [{t0}, {t1}]")]
    InvalidSpan { t0: f64, t1: f64 },
    #[error("step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("record stride must be at least 1")]
    InvalidStride,
    #[error("initial state has {got} components, system expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite state at t = {t}: {state:?}")]
    NonFinite { t: f64, state: Vec<f64> },
}

/// Autonomous or time-varying `ẋ = f(t, x)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;

    /// Writes `f(t, x)` into `dx`.
    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]);

    /// Components that must stay nonnegative; clamped to zero after every step.
    fn nonnegative(&self) -> Range<usize> {
        0..0
    }

    fn label(&self) -> String {
        "ode".into()
    }
}

/// Adapts a closure to [`OdeSystem`].
pub struct FnSystem<F> {
    dim: usize,
    label: String,
    f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64])> FnSystem<F> {
    pub fn new(dim: usize, label: &str, f: F) -> Self {
        Self { dim, label: label.into(), f }
    }
}

impl<F: Fn(f64, &[f64], &mut [f64])> OdeSystem for FnSystem<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        (self.f)(t, x, dx)
    }

    fn label(&self) -> String {
        self.label.clone()
    }
}

/// Recorded samples of one integration run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Step actually used: `(t1 - t0) / steps`.
    pub step: f64,
    pub steps: usize,
    pub label: String,
    /// How many component clamps to zero happened.
    pub clamp_count: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Component `i` of every recorded state.
    pub fn component(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[i]).collect()
    }
}

/// Integrates `system` from `t0` to `t1` with classical RK4.
///
/// The step count is `round((t1 - t0) / h)` and the step is adjusted so the
/// last step lands on `t1`. States are recorded every `record_stride` steps
/// and always at the final time.
pub fn integrate_fixed<S: OdeSystem + ?Sized>(
    system: &S,
    state0: &[f64],
    t0: f64,
    t1: f64,
    h: f64,
    record_stride: usize,
) -> Result<Trajectory, IntegrateError> {
    if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
        return Err(IntegrateError::InvalidSpan { t0, t1 });
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(IntegrateError::InvalidStep(h));
    }
    if record_stride == 0 {
        return Err(IntegrateError::InvalidStride);
    }
    let dim = system.dim();
    if state0.len() != dim {
        return Err(IntegrateError::DimensionMismatch { expected: dim, got: state0.len() });
    }
    if state0.iter().any(|v| !v.is_finite()) {
        return Err(IntegrateError::NonFinite { t: t0, state: state0.to_vec() });
    }

    let steps = (((t1 - t0) / h).round() as usize).max(1);
    let h = (t1 - t0) / steps as f64;
    let clamp = system.nonnegative();

    let mut x = state0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut tmp = vec![0.0; dim];
    let capacity = steps / record_stride + 2;
    let mut times = Vec::with_capacity(capacity);
    let mut states = Vec::with_capacity(capacity);
    times.push(t0);
    states.push(x.clone());
    let mut clamp_count = 0;

    for step in 0..steps {
        let t = t0 + step as f64 * h;
        system.rhs(t, &x, &mut k1);
        for i in 0..dim {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        system.rhs(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        system.rhs(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = x[i] + h * k3[i];
        }
        system.rhs(t + h, &tmp, &mut k4);
        for i in 0..dim {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        for i in clamp.clone() {
            if x[i] < 0.0 {
                x[i] = 0.0;
                clamp_count += 1;
            }
        }
        let t_next = if step + 1 == steps { t1 } else { t0 + (step + 1) as f64 * h };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(IntegrateError::NonFinite { t: t_next, state: x });
        }
        if (step + 1) % record_stride == 0 || step + 1 == steps {
            times.push(t_next);
            states.push(x.clone());
        }
    }

    Ok(Trajectory { times, states, step: h, steps, label: system.label(), clamp_count })
}
