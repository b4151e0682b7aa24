//! Numerical Lyapunov function for the averaged loop in error coordinates.
//!
//! ```text
//! V = V_θ(θ̄ᵉ) + max{r_ξ(V_θ), |ξ̄ᵉ|} + Σ_i max{r_v,i(V_θ, V_ξ), |v̄ᵉ_i|}
//! ```
//!
//! `V_θ(φ) = J(θ* + φ) - J(θ*)`, `V_ξ` is the middle term, and the radii are
//! the largest filter targets reachable inside the level sets:
//!
//! ```text
//! r_ξ(c)       = max |J̄(θ*+φ) - ξ*|                    over V_θ(φ) ≤ c
//! r_v,i(c, d)  = max |(ḡ²)_i(θ*+φ, ξ*+η) - v*_i|       over V_θ(φ) ≤ c, r_ξ(V_θ(φ)) ≤ d, |η| ≤ d
//! ```
//!
//! The φ-search runs over a tabulated point set (a full grid for `n ≤ 2`,
//! seeded uniform samples otherwise, so higher dimensions are approximate),
//! followed by a line refinement through the best point along each axis. The
//! η-search is exact because `(ḡ²)_i` is a quadratic in `η`.

use std::collections::BTreeMap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::averaging::{Averager, AveragingError, Equilibrium, WashoutQuadratic};
use crate::cost::{CostError, CostFunction};
use crate::dynamics::{check_len, DynamicsError};
use crate::integrate::Trajectory;
use crate::signals::DitherConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LyapunovError {
    #[error("level {level} reaches the search box boundary (boundary minimum of V_θ is {boundary_min}); widen the box")]
    BoxEscape { level: f64, boundary_min: f64 },
    #[error("levels must be nonnegative and finite, got {0}")]
    InvalidLevel(f64),
    #[error("invalid search settings: {0}")]
    InvalidSpec(String),
    #[error("channel {channel} out of range for dimension {dim}")]
    InvalidChannel { channel: usize, dim: usize },
    #[error(transparent)]
    Averaging(#[from] AveragingError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// Where and how finely the radii are searched.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpec {
    /// Half-width of the box around `θ*`, the same on every axis.
    pub half_width: f64,
    /// Points per axis for `n ≤ 2`; rounded up to odd so `θ*` is a node.
    pub grid: usize,
    /// Sample count for `n > 2`.
    pub samples: usize,
    pub seed: u64,
    /// Relative level quantization for memoization; `None` disables the cache.
    pub level_quantum: Option<f64>,
    /// Raise each radius to the largest value already found at lower levels.
    pub monotone_envelope: bool,
    /// Quadrature nodes; `None` means `256 · r_max`.
    pub nodes: Option<usize>,
}

impl SearchSpec {
    pub fn new(half_width: f64) -> Self {
        Self {
            half_width,
            grid: 401,
            samples: 20_000,
            seed: 0x5eed,
            level_quantum: Some(1e-3),
            monotone_envelope: true,
            nodes: None,
        }
    }

    /// Smallest box `0.25 · 2^k` whose boundary lies above `level`.
    pub fn covering(cost: &CostFunction, theta_star: &[f64], level: f64) -> Result<Self, LyapunovError> {
        check_len("theta_star", cost.dim(), theta_star.len())?;
        check_level(level)?;
        let base = cost.value(theta_star);
        let mut half_width = 0.25;
        for _ in 0..60 {
            let faces = boundary_points(theta_star, half_width, 101, 4_000, 0xb0c5);
            let min = faces.iter().map(|p| cost.value(p) - base).fold(f64::INFINITY, f64::min);
            if min > level {
                return Ok(Self::new(half_width));
            }
            half_width *= 2.0;
        }
        Err(LyapunovError::InvalidSpec(format!("no box up to half-width {half_width:e} contains level {level}")))
    }

    fn validate(&self) -> Result<(), LyapunovError> {
        if !(self.half_width.is_finite() && self.half_width > 0.0) {
            return Err(LyapunovError::InvalidSpec(format!("half-width must be positive, got {}", self.half_width)));
        }
        if self.grid < 3 {
            return Err(LyapunovError::InvalidSpec("grid needs at least 3 points per axis".into()));
        }
        if self.samples == 0 {
            return Err(LyapunovError::InvalidSpec("sample count must be positive".into()));
        }
        if let Some(q) = self.level_quantum {
            if !(q.is_finite() && q > 0.0) {
                return Err(LyapunovError::InvalidSpec(format!("level quantum must be positive, got {q}")));
            }
        }
        Ok(())
    }
}

fn check_level(level: f64) -> Result<(), LyapunovError> {
    if level.is_finite() && level >= 0.0 {
        Ok(())
    } else {
        Err(LyapunovError::InvalidLevel(level))
    }
}

/// `V_θ(θ̄ᵉ) = J(θ̄ᵉ + θ*) - J(θ*)`.
pub fn v_theta(cost: &CostFunction, theta_star: &[f64], theta_err: &[f64]) -> Result<f64, LyapunovError> {
    check_len("theta_star", cost.dim(), theta_star.len())?;
    check_len("theta_err", cost.dim(), theta_err.len())?;
    let p: Vec<f64> = theta_star.iter().zip(theta_err).map(|(a, b)| a + b).collect();
    Ok(cost.value(&p) - cost.value(theta_star))
}

/// Points on the faces of the box around `center`: the full face grid for
/// `n ≤ 2`, seeded samples otherwise.
fn boundary_points(center: &[f64], half_width: f64, grid: usize, samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = center.len();
    match n {
        1 => vec![vec![center[0] - half_width], vec![center[0] + half_width]],
        2 => {
            let mut out = Vec::with_capacity(4 * grid);
            for k in 0..grid {
                let s = half_width * (2.0 * k as f64 / (grid - 1) as f64 - 1.0);
                for side in [-half_width, half_width] {
                    out.push(vec![center[0] + side, center[1] + s]);
                    out.push(vec![center[0] + s, center[1] + side]);
                }
            }
            out
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..samples)
                .map(|_| {
                    let mut p: Vec<f64> = center.iter().map(|c| c + rng.gen_range(-half_width..=half_width)).collect();
                    let axis = rng.gen_range(0..n);
                    p[axis] = center[axis] + if rng.gen::<bool>() { half_width } else { -half_width };
                    p
                })
                .collect()
        }
    }
}

/// Tabulated search points, sorted by `V_θ`.
#[derive(Debug)]
struct Table {
    /// Offsets `φ`, `n` per point.
    phi: Vec<f64>,
    v_theta: Vec<f64>,
    /// `J̄(θ* + φ) - ξ*`.
    j_err: Vec<f64>,
    /// `(ḡ²)_i(θ* + φ, ξ* + η)` as quadratics in `η`, `n` per point.
    washout: Vec<WashoutQuadratic>,
    /// Running maximum of `|j_err|` and where it was attained.
    prefix_xi: Vec<(f64, usize)>,
    boundary_min: f64,
    grid: Option<usize>,
    /// Grid index of each sorted entry, for the connectivity check.
    grid_index: Vec<usize>,
}

#[derive(Debug, Default)]
struct Memo {
    xi: BTreeMap<u64, f64>,
    v: Vec<((f64, f64), Vec<f64>)>,
}

/// Radii and `V` for one equilibrium, reusing a tabulated search.
#[derive(Debug)]
pub struct RadiusSolver<'a> {
    cost: &'a CostFunction,
    averager: Averager<'a>,
    eq: Equilibrium,
    spec: SearchSpec,
    j_star: f64,
    table: Table,
    memo: Mutex<Memo>,
}

/// Terms of `V` at one error state.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovReport {
    /// `V_θ`, clamped at zero.
    pub v_theta: f64,
    /// `max{r_ξ(V_θ), |ξ̄ᵉ|}`.
    pub v_xi: f64,
    /// `max{r_v,i(V_θ, V_ξ), |v̄ᵉ_i|}` per channel.
    pub v_v: Vec<f64>,
    pub r_xi: f64,
    pub r_v: Vec<f64>,
    pub v_total: f64,
}

impl<'a> RadiusSolver<'a> {
    pub fn new(
        cost: &'a CostFunction,
        dither: &'a DitherConfig,
        eq: &Equilibrium,
        spec: &SearchSpec,
    ) -> Result<Self, LyapunovError> {
        spec.validate()?;
        check_len("equilibrium", cost.dim(), eq.dim())?;
        let nodes = spec.nodes.unwrap_or_else(|| crate::averaging::default_nodes(dither));
        let averager = Averager::new(cost, dither, nodes)?;
        let j_star = cost.value(&eq.theta_star);
        let mut solver = Self {
            cost,
            averager,
            eq: eq.clone(),
            spec: spec.clone(),
            j_star,
            table: Table {
                phi: Vec::new(),
                v_theta: Vec::new(),
                j_err: Vec::new(),
                washout: Vec::new(),
                prefix_xi: Vec::new(),
                boundary_min: f64::INFINITY,
                grid: None,
                grid_index: Vec::new(),
            },
            memo: Mutex::new(Memo::default()),
        };
        solver.table = solver.build_table();
        Ok(solver)
    }

    /// Builds the solver on [`SearchSpec::covering`] for `level`.
    pub fn covering(
        cost: &'a CostFunction,
        dither: &'a DitherConfig,
        eq: &Equilibrium,
        level: f64,
    ) -> Result<Self, LyapunovError> {
        let spec = SearchSpec::covering(cost, &eq.theta_star, level)?;
        Self::new(cost, dither, eq, &spec)
    }

    pub fn equilibrium(&self) -> &Equilibrium {
        &self.eq
    }

    pub fn spec(&self) -> &SearchSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.eq.dim()
    }

    /// Smallest `V_θ` found on the box boundary.
    pub fn boundary_min(&self) -> f64 {
        self.table.boundary_min
    }

    fn build_table(&self) -> Table {
        let n = self.dim();
        let hw = self.spec.half_width;
        let (offsets, grid) = if n <= 2 {
            let g = self.spec.grid | 1;
            let axis: Vec<f64> = (0..g).map(|k| hw * (2.0 * k as f64 / (g - 1) as f64 - 1.0)).collect();
            let total = g.pow(n as u32);
            let mut offsets = Vec::with_capacity(total * n);
            for k in 0..total {
                let mut rest = k;
                for _ in 0..n {
                    offsets.push(axis[rest % g]);
                    rest /= g;
                }
            }
            (offsets, Some(g))
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
            let mut offsets = vec![0.0; n];
            for _ in 0..self.spec.samples {
                offsets.extend((0..n).map(|_| rng.gen_range(-hw..=hw)));
            }
            (offsets, None)
        };
        let count = offsets.len() / n;
        let rows: Vec<(f64, f64, Vec<WashoutQuadratic>)> = (0..count)
            .into_par_iter()
            .map(|k| {
                let theta = self.shifted(&offsets[k * n..(k + 1) * n]);
                let (j_bar, washout) = self.averager.washout_quadratics(&theta, self.eq.xi_star);
                (self.cost.value(&theta) - self.j_star, j_bar - self.eq.xi_star, washout)
            })
            .collect();

        let mut order: Vec<usize> = (0..count).collect();
        order.sort_by(|&a, &b| rows[a].0.total_cmp(&rows[b].0).then(a.cmp(&b)));
        let mut table = Table {
            phi: Vec::with_capacity(count * n),
            v_theta: Vec::with_capacity(count),
            j_err: Vec::with_capacity(count),
            washout: Vec::with_capacity(count * n),
            prefix_xi: Vec::with_capacity(count),
            boundary_min: f64::INFINITY,
            grid,
            grid_index: order.clone(),
        };
        let mut best = (0.0, 0);
        for (slot, &k) in order.iter().enumerate() {
            let (vt, je, washout) = &rows[k];
            table.phi.extend_from_slice(&offsets[k * n..(k + 1) * n]);
            table.v_theta.push(*vt);
            table.j_err.push(*je);
            table.washout.extend_from_slice(washout);
            if je.abs() > best.0 || slot == 0 {
                best = (je.abs(), slot);
            }
            table.prefix_xi.push(best);
        }
        table.boundary_min = boundary_points(&self.eq.theta_star, hw, grid.unwrap_or(101), self.spec.samples, self.spec.seed ^ 1)
            .iter()
            .map(|p| self.cost.value(p) - self.j_star)
            .fold(f64::INFINITY, f64::min);
        table
    }

    fn shifted(&self, phi: &[f64]) -> Vec<f64> {
        self.eq.theta_star.iter().zip(phi).map(|(a, b)| a + b).collect()
    }

    fn v_theta_at(&self, phi: &[f64]) -> f64 {
        self.cost.value(&self.shifted(phi)) - self.j_star
    }

    /// Number of sorted entries with `V_θ ≤ level`.
    fn feasible_prefix(&self, level: f64) -> usize {
        self.table.v_theta.partition_point(|v| *v <= level)
    }

    fn check_box(&self, level: f64) -> Result<(), LyapunovError> {
        if level >= self.table.boundary_min {
            Err(LyapunovError::BoxEscape { level, boundary_min: self.table.boundary_min })
        } else {
            Ok(())
        }
    }

    fn quantize(&self, level: f64) -> f64 {
        match self.spec.level_quantum {
            Some(q) if level > 0.0 => {
                let step = (1.0 + q).ln();
                let up = ((level.ln() / step).ceil() * step).exp();
                up.max(level)
            }
            _ => level,
        }
    }

    /// Maximizes `objective` over the feasible part of each axis line through
    /// `start`; feasibility is `V_θ ≤ level`.
    fn refine(&self, start: &[f64], level: f64, objective: &dyn Fn(&[f64]) -> f64) -> f64 {
        let hw = self.spec.half_width;
        let mut best = objective(start);
        let mut point = start.to_vec();
        for d in 0..start.len() {
            let mut ends = [0.0; 2];
            for (slot, dir) in [-1.0, 1.0].into_iter().enumerate() {
                let reach = hw - dir * start[d];
                let (mut lo, mut hi) = (0.0, reach.max(0.0));
                point.copy_from_slice(start);
                point[d] = start[d] + dir * hi;
                if self.v_theta_at(&point) <= level {
                    lo = hi;
                } else {
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        point[d] = start[d] + dir * mid;
                        if self.v_theta_at(&point) <= level {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                }
                ends[slot] = start[d] + dir * lo;
            }
            let mut eval = |x: f64| {
                point.copy_from_slice(start);
                point[d] = x;
                objective(&point)
            };
            best = best.max(eval(ends[0])).max(eval(ends[1]));
            best = best.max(golden_max(&mut eval, ends[0], ends[1], 40));
        }
        best
    }

    /// `r_ξ` at exactly `level`, without memoization.
    fn radius_xi_raw(&self, level: f64) -> f64 {
        let count = self.feasible_prefix(level);
        if count == 0 {
            return 0.0;
        }
        let (grid_best, slot) = self.table.prefix_xi[count - 1];
        let n = self.dim();
        let start = &self.table.phi[slot * n..(slot + 1) * n];
        let objective = |phi: &[f64]| (self.averager.j_bar(&self.shifted(phi)) - self.eq.xi_star).abs();
        grid_best.max(self.refine(start, level, &objective))
    }

    /// Largest `|J̄(θ* + φ) - ξ*|` with `V_θ(φ) ≤ c_theta`.
    pub fn radius_xi(&self, c_theta: f64) -> Result<f64, LyapunovError> {
        check_level(c_theta)?;
        if c_theta == 0.0 {
            return Ok(0.0);
        }
        self.check_box(c_theta)?;
        let level = self.quantize(c_theta);
        if self.spec.level_quantum.is_none() && !self.spec.monotone_envelope {
            return Ok(self.radius_xi_raw(level));
        }
        let key = level.to_bits();
        if let Some(v) = self.memo.lock().unwrap().xi.get(&key) {
            return Ok(*v);
        }
        let mut value = self.radius_xi_raw(level);
        let mut memo = self.memo.lock().unwrap();
        if self.spec.monotone_envelope {
            if let Some((_, below)) = memo.xi.range(..key).next_back() {
                value = value.max(*below);
            }
            for (_, above) in memo.xi.range_mut(key + 1..) {
                *above = above.max(value);
            }
        }
        memo.xi.insert(key, value);
        Ok(value)
    }

    /// Largest `V_θ` level whose `r_ξ` stays within `c_xi`, capped at `c_theta`.
    ///
    /// The bisection bracket does not depend on `c_theta`, so the cap is the
    /// only way `c_theta` enters once the washout constraint binds.
    fn washout_limited_level(&self, c_theta: f64, c_xi: f64) -> Result<f64, LyapunovError> {
        if self.radius_xi(c_theta)? <= c_xi {
            return Ok(c_theta);
        }
        let (mut lo, mut hi) = (0.0, self.table.boundary_min * (1.0 - 1e-12));
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.radius_xi(mid)? <= c_xi {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo.min(c_theta))
    }

    fn radius_v_raw(&self, level: f64, c_xi: f64) -> Vec<f64> {
        let n = self.dim();
        let count = self.feasible_prefix(level);
        (0..n)
            .map(|i| {
                if count == 0 {
                    return 0.0;
                }
                let v_star = self.eq.v_star[i];
                let mut best = (f64::NEG_INFINITY, 0);
                for slot in 0..count {
                    let dev = self.table.washout[slot * n + i].max_deviation(v_star, c_xi);
                    if dev > best.0 {
                        best = (dev, slot);
                    }
                }
                let start = &self.table.phi[best.1 * n..(best.1 + 1) * n];
                let objective = |phi: &[f64]| {
                    let (_, q) = self.averager.washout_quadratics(&self.shifted(phi), self.eq.xi_star);
                    q[i].max_deviation(v_star, c_xi)
                };
                best.0.max(self.refine(start, level, &objective))
            })
            .collect()
    }

    /// `r_v,i(c_θ, c_ξ)` for every channel.
    pub fn radius_v_all(&self, c_theta: f64, c_xi: f64) -> Result<Vec<f64>, LyapunovError> {
        check_level(c_theta)?;
        check_level(c_xi)?;
        let n = self.dim();
        if c_theta == 0.0 && c_xi == 0.0 {
            return Ok(vec![0.0; n]);
        }
        if c_theta > 0.0 {
            self.check_box(c_theta)?;
        }
        let (qt, qx) = (self.quantize(c_theta), self.quantize(c_xi));
        let level = self.washout_limited_level(qt, qx)?;
        if self.spec.level_quantum.is_none() && !self.spec.monotone_envelope {
            return Ok(self.radius_v_raw(level, qx));
        }
        if let Some((_, v)) = self.memo.lock().unwrap().v.iter().find(|(k, _)| *k == (qt, qx)) {
            return Ok(v.clone());
        }
        let mut value = self.radius_v_raw(level, qx);
        let mut memo = self.memo.lock().unwrap();
        if self.spec.monotone_envelope {
            for ((a, b), v) in memo.v.iter_mut() {
                if *a <= qt && *b <= qx {
                    value.iter_mut().zip(v.iter()).for_each(|(x, y)| *x = x.max(*y));
                }
            }
            for ((a, b), v) in memo.v.iter_mut() {
                if *a >= qt && *b >= qx {
                    v.iter_mut().zip(&value).for_each(|(x, y)| *x = x.max(*y));
                }
            }
        }
        memo.v.push(((qt, qx), value.clone()));
        Ok(value)
    }

    pub fn radius_v(&self, c_theta: f64, c_xi: f64, channel: usize) -> Result<f64, LyapunovError> {
        if channel >= self.dim() {
            return Err(LyapunovError::InvalidChannel { channel, dim: self.dim() });
        }
        Ok(self.radius_v_all(c_theta, c_xi)?[channel])
    }

    pub fn lyapunov_value(&self, err: &crate::averaging::ErrorState) -> Result<LyapunovReport, LyapunovError> {
        let n = self.dim();
        check_len("theta_err", n, err.theta_err.len())?;
        check_len("v_err", n, err.v_err.len())?;
        let v_theta = v_theta(self.cost, &self.eq.theta_star, &err.theta_err)?.max(0.0);
        let r_xi = self.radius_xi(v_theta)?;
        let v_xi = r_xi.max(err.xi_err.abs());
        let r_v = self.radius_v_all(v_theta, v_xi)?;
        let v_v: Vec<f64> = r_v.iter().zip(&err.v_err).map(|(r, e)| r.max(e.abs())).collect();
        let v_total = v_theta + v_xi + v_v.iter().sum::<f64>();
        Ok(LyapunovReport { v_theta, v_xi, v_v, r_xi, r_v, v_total })
    }

    /// Connected components (face adjacency) of the grid sublevel set
    /// `{V_θ ≤ level}`; `None` when the search is sampled.
    pub fn sublevel_components(&self, level: f64) -> Option<usize> {
        let g = self.table.grid?;
        let n = self.dim();
        let total = g.pow(n as u32);
        let mut inside = vec![false; total];
        for slot in 0..self.feasible_prefix(level) {
            inside[self.table.grid_index[slot]] = true;
        }
        let mut seen = vec![false; total];
        let mut components = 0;
        for start in 0..total {
            if !inside[start] || seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            let mut stack = vec![start];
            while let Some(k) = stack.pop() {
                let mut stride = 1;
                for _ in 0..n {
                    let coord = (k / stride) % g;
                    let mut visit = |nb: usize| {
                        if inside[nb] && !seen[nb] {
                            seen[nb] = true;
                            stack.push(nb);
                        }
                    };
                    if coord > 0 {
                        visit(k - stride);
                    }
                    if coord + 1 < g {
                        visit(k + stride);
                    }
                    stride *= g;
                }
            }
        }
        Some(components)
    }
}

/// Golden-section search for a maximum on `[a, b]`; returns the best value
/// seen, which is exact for unimodal objectives and a lower bound otherwise.
fn golden_max(f: &mut dyn FnMut(f64) -> f64, mut a: f64, mut b: f64, iterations: usize) -> f64 {
    if b <= a {
        return f(a);
    }
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    let mut best = f1.max(f2);
    for _ in 0..iterations {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = f(x2);
            best = best.max(f2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = f(x1);
            best = best.max(f1);
        }
    }
    best
}

/// Radius problems without keeping a solver around.
pub fn radius_xi(
    cost: &CostFunction,
    dither: &DitherConfig,
    eq: &Equilibrium,
    c_theta: f64,
    spec: &SearchSpec,
) -> Result<f64, LyapunovError> {
    RadiusSolver::new(cost, dither, eq, spec)?.radius_xi(c_theta)
}

pub fn radius_v(
    cost: &CostFunction,
    dither: &DitherConfig,
    eq: &Equilibrium,
    c_theta: f64,
    c_xi: f64,
    channel: usize,
    spec: &SearchSpec,
) -> Result<f64, LyapunovError> {
    RadiusSolver::new(cost, dither, eq, spec)?.radius_v(c_theta, c_xi, channel)
}

pub fn lyapunov_value(
    err: &crate::averaging::ErrorState,
    cost: &CostFunction,
    dither: &DitherConfig,
    eq: &Equilibrium,
    spec: &SearchSpec,
) -> Result<LyapunovReport, LyapunovError> {
    RadiusSolver::new(cost, dither, eq, spec)?.lyapunov_value(err)
}

#[derive(Debug, Clone, PartialEq)]
pub enum DescentVerdict {
    Pass,
    /// First sample where `V` rose by more than the tolerance.
    Fail { index: usize, t: f64, increase: f64 },
}

impl DescentVerdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Self::Pass)
    }
}

/// Filter errors leaving the bound `max{|e(0)|, r(levels at t = 0)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBoundViolation {
    pub index: usize,
    pub t: f64,
    /// `None` for the washout filter, `Some(i)` for the `i`-th `v̂` filter.
    pub channel: Option<usize>,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentReport {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub tol: f64,
    pub verdict: DescentVerdict,
    pub xi_bound: f64,
    pub v_bounds: Vec<f64>,
    pub filter_violation: Option<FilterBoundViolation>,
}

impl DescentReport {
    pub fn passed(&self) -> bool {
        self.verdict.is_pass() && self.filter_violation.is_none()
    }
}

/// Tolerance for filter-error bounds.
pub const FILTER_BOUND_TOL: f64 = 1e-6;

/// Evaluates `V` along an averaged-system trajectory (flattened
/// `[θ̄, v̄, ξ̄]` states) and checks that it never rises by more than `tol`,
/// default `1e-6 · V(0) + 1e-12`. Also checks the filter-error bounds.
pub fn monitor_descent(
    trajectory: &Trajectory,
    solver: &RadiusSolver,
    tol: Option<f64>,
) -> Result<DescentReport, LyapunovError> {
    let n = solver.dim();
    if trajectory.is_empty() {
        return Err(LyapunovError::InvalidSpec("empty trajectory".into()));
    }
    for state in &trajectory.states {
        check_len("trajectory state", 2 * n + 1, state.len())?;
    }
    let eq = solver.equilibrium();
    let mut values = Vec::with_capacity(trajectory.len());
    let mut first = None;
    for state in &trajectory.states {
        let report = solver.lyapunov_value(&eq.error_of(state))?;
        if first.is_none() {
            first = Some(report.clone());
        }
        values.push(report.v_total);
    }
    let first = first.expect("nonempty trajectory");
    let tol = tol.unwrap_or(1e-6 * values[0] + 1e-12);
    let verdict = values
        .windows(2)
        .enumerate()
        .find(|(_, w)| w[1] > w[0] + tol)
        .map(|(j, w)| DescentVerdict::Fail { index: j + 1, t: trajectory.times[j + 1], increase: w[1] - w[0] })
        .unwrap_or(DescentVerdict::Pass);

    let err0 = eq.error_of(&trajectory.states[0]);
    let xi_bound = err0.xi_err.abs().max(first.r_xi);
    let v_bounds: Vec<f64> = err0.v_err.iter().zip(&first.r_v).map(|(e, r)| e.abs().max(*r)).collect();
    let mut filter_violation = None;
    'scan: for (index, state) in trajectory.states.iter().enumerate() {
        let err = eq.error_of(state);
        let t = trajectory.times[index];
        if err.xi_err.abs() > xi_bound + FILTER_BOUND_TOL {
            filter_violation = Some(FilterBoundViolation { index, t, channel: None, value: err.xi_err.abs(), bound: xi_bound });
            break;
        }
        for (i, (e, b)) in err.v_err.iter().zip(&v_bounds).enumerate() {
            if e.abs() > b + FILTER_BOUND_TOL {
                filter_violation = Some(FilterBoundViolation { index, t, channel: Some(i), value: e.abs(), bound: *b });
                break 'scan;
            }
        }
    }
    Ok(DescentReport { times: trajectory.times.clone(), values, tol, verdict, xi_bound, v_bounds, filter_violation })
}
