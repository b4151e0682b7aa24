//! Grid-based spot checks of the standing assumptions on a cost:
//! continuous differentiability, a unique minimizer, no other stationary
//! point, and radial growth.
//!
//! These are heuristics over a bounded box at a fixed resolution. A `Pass`
//! means nothing suspicious was seen on that grid, nothing more.

use super::{fd_step, CostError, CostFunction};

/// Largest grid the checker will evaluate.
const MAX_GRID_POINTS: usize = 4_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Pass,
    Fail { witness: Vec<f64> },
    Indeterminate { witness: Option<Vec<f64>> },
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass)
    }

    pub fn is_fail(&self) -> bool {
        matches!(self, Verdict::Fail { .. })
    }

    pub fn witness(&self) -> Option<&[f64]> {
        match self {
            Verdict::Pass => None,
            Verdict::Fail { witness } => Some(witness),
            Verdict::Indeterminate { witness } => witness.as_deref(),
        }
    }
}

/// Axis-aligned box `[lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl SearchBox {
    pub fn new(lower: &[f64], upper: &[f64]) -> Result<Self, CostError> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(CostError::InvalidParameter("box bounds must have equal, nonzero length".into()));
        }
        for (axis, (l, u)) in lower.iter().zip(upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && u > l) {
                return Err(CostError::DegenerateBox { axis });
            }
        }
        Ok(Self { lower: lower.to_vec(), upper: upper.to_vec() })
    }

    /// `[-half_width, half_width]ⁿ` shifted to `center`.
    pub fn centered(center: &[f64], half_width: f64) -> Result<Self, CostError> {
        let lower: Vec<f64> = center.iter().map(|c| c - half_width).collect();
        let upper: Vec<f64> = center.iter().map(|c| c + half_width).collect();
        Self::new(&lower, &upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter().zip(&self.lower).zip(&self.upper).all(|((x, l), u)| x >= l && x <= u)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    /// J is C¹: one-sided difference quotients agree at every node.
    pub continuity: Verdict,
    /// No competing local minimum on the grid.
    pub unique_minimum: Verdict,
    /// The gradient vanishes in one place only.
    pub unique_stationary_point: Verdict,
    /// J keeps growing toward the box boundary. Never reported as `Fail`.
    pub radially_unbounded: Verdict,
    pub search_box: SearchBox,
    pub grid_n: usize,
}

impl AssumptionReport {
    pub fn verdicts(&self) -> [(&'static str, &Verdict); 4] {
        [
            ("A1 continuously differentiable", &self.continuity),
            ("A2 unique minimum", &self.unique_minimum),
            ("A3 unique stationary point", &self.unique_stationary_point),
            ("A4 radially unbounded", &self.radially_unbounded),
        ]
    }

    /// A1–A3 pass and A4 is not contradicted.
    pub fn acceptable(&self) -> bool {
        self.continuity.is_pass()
            && self.unique_minimum.is_pass()
            && self.unique_stationary_point.is_pass()
            && !self.radially_unbounded.is_fail()
    }
}

struct Grid<'a> {
    b: &'a SearchBox,
    n: usize,
    dim: usize,
}

impl Grid<'_> {
    fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    fn index_of(&self, mut flat: usize, idx: &mut [usize]) {
        for slot in idx.iter_mut() {
            *slot = flat % self.n;
            flat /= self.n;
        }
    }

    fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().rev().fold(0, |acc, &i| acc * self.n + i)
    }

    fn point(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .enumerate()
            .map(|(d, &i)| {
                let (l, u) = (self.b.lower[d], self.b.upper[d]);
                l + (u - l) * i as f64 / (self.n - 1) as f64
            })
            .collect()
    }

    fn on_boundary(&self, idx: &[usize]) -> bool {
        idx.iter().any(|&i| i == 0 || i == self.n - 1)
    }

    /// Flat indices of the face neighbours of `idx`.
    fn neighbours(&self, idx: &[usize], limit: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(2 * self.dim);
        let mut probe = idx.to_vec();
        for d in 0..self.dim {
            if idx[d] > 0 {
                probe[d] = idx[d] - 1;
                out.push(self.flat(&probe));
            }
            if idx[d] + 1 < limit {
                probe[d] = idx[d] + 1;
                out.push(self.flat(&probe));
            }
            probe[d] = idx[d];
        }
        out
    }

    /// Flat indices of every item sharing at least a corner with `idx`.
    fn touching(&self, idx: &[usize], limit: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut probe = idx.to_vec();
        for code in 0..3usize.pow(self.dim as u32) {
            let mut c = code;
            let mut valid = true;
            let mut moved = false;
            for d in 0..self.dim {
                let shift = (c % 3) as isize - 1;
                c /= 3;
                let j = idx[d] as isize + shift;
                if j < 0 || j >= limit as isize {
                    valid = false;
                    break;
                }
                moved |= shift != 0;
                probe[d] = j as usize;
            }
            if valid && moved {
                out.push(self.flat(&probe));
            }
        }
        out
    }
}

/// Groups flagged grid items into connected clusters. `flags` is indexed
/// like the grid; `limit` is the per-axis extent of the items. With
/// `diagonal` set, items touching at a corner count as connected.
fn clusters(grid: &Grid, flags: &[bool], limit: usize, diagonal: bool) -> Vec<Vec<usize>> {
    let mut seen = vec![false; flags.len()];
    let mut out = Vec::new();
    let mut idx = vec![0; grid.dim];
    for start in 0..flags.len() {
        if !flags[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut members = Vec::new();
        while let Some(k) = stack.pop() {
            members.push(k);
            grid.index_of(k, &mut idx);
            let around = if diagonal { grid.touching(&idx, limit) } else { grid.neighbours(&idx, limit) };
            for nb in around {
                if flags[nb] && !seen[nb] {
                    seen[nb] = true;
                    stack.push(nb);
                }
            }
        }
        out.push(members);
    }
    out
}

/// Runs the four checks on a `grid_n`-per-axis grid over `search_box`.
pub fn check_assumptions(
    cost: &CostFunction,
    search_box: &SearchBox,
    grid_n: usize,
) -> Result<AssumptionReport, CostError> {
    let dim = cost.dim();
    if search_box.dim() != dim {
        return Err(CostError::DimensionMismatch { expected: dim, got: search_box.dim() });
    }
    if grid_n < 3 {
        return Err(CostError::InvalidParameter(format!("grid needs at least 3 points per axis, got {grid_n}")));
    }
    if let Some(star) = cost.minimizer() {
        if !search_box.contains(star) {
            return Err(CostError::InvalidParameter("known minimizer lies outside the search box".into()));
        }
    }
    let points = (grid_n as u128).checked_pow(dim as u32).unwrap_or(u128::MAX);
    if points > MAX_GRID_POINTS as u128 {
        return Err(CostError::GridTooLarge { points: points.min(usize::MAX as u128) as usize, limit: MAX_GRID_POINTS });
    }

    let grid = Grid { b: search_box, n: grid_n, dim };
    let total = grid.len();
    let mut idx = vec![0; dim];
    let mut values = Vec::with_capacity(total);
    let mut grads = Vec::with_capacity(total * dim);
    let mut continuity = Verdict::Pass;
    let mut g = vec![0.0; dim];
    for k in 0..total {
        grid.index_of(k, &mut idx);
        let p = grid.point(&idx);
        let value = cost.value(&p);
        values.push(value);
        if continuity.is_pass() {
            if let Some(witness) = one_sided_mismatch(cost, &p, value) {
                continuity = Verdict::Fail { witness };
            }
        }
        cost.grad_into(&p, &mut g);
        grads.extend_from_slice(&g);
    }

    let global = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let near_known_min = |k: usize, idx: &mut Vec<usize>| -> bool {
        let Some(star) = cost.minimizer() else { return true };
        grid.index_of(k, idx);
        let p = grid.point(idx);
        p.iter().enumerate().all(|(d, x)| {
            let spacing = (search_box.upper[d] - search_box.lower[d]) / (grid_n - 1) as f64;
            (x - star[d]).abs() <= 1.5 * spacing
        })
    };

    let unique_minimum = {
        let mut flags = vec![false; total];
        for k in 0..total {
            grid.index_of(k, &mut idx);
            if grid.on_boundary(&idx) {
                continue;
            }
            flags[k] = grid.neighbours(&idx, grid_n).iter().all(|&nb| values[k] <= values[nb]);
        }
        let found = clusters(&grid, &flags, grid_n, false);
        grid.index_of(global, &mut idx);
        if grid.on_boundary(&idx) {
            Verdict::Indeterminate { witness: Some(grid.point(&idx)) }
        } else if found.len() > 1 {
            let competitor = found
                .iter()
                .filter(|c| !c.contains(&global))
                .flat_map(|c| c.iter().copied())
                .min_by(|&a, &b| values[a].total_cmp(&values[b]))
                .unwrap_or(global);
            grid.index_of(competitor, &mut idx);
            Verdict::Fail { witness: grid.point(&idx) }
        } else if !near_known_min(global, &mut idx) {
            grid.index_of(global, &mut idx);
            Verdict::Fail { witness: grid.point(&idx) }
        } else {
            Verdict::Pass
        }
    };

    let unique_stationary_point = {
        // cells indexed by their lower corner; only corners < grid_n - 1 are real cells
        let cell_limit = grid_n - 1;
        let mut flags = vec![false; total];
        let corners = 1usize << dim;
        let mut corner = vec![0; dim];
        for k in 0..total {
            grid.index_of(k, &mut idx);
            if idx.iter().any(|&i| i >= cell_limit) {
                continue;
            }
            let mut lo = vec![f64::INFINITY; dim];
            let mut hi = vec![f64::NEG_INFINITY; dim];
            for c in 0..corners {
                for d in 0..dim {
                    corner[d] = idx[d] + ((c >> d) & 1);
                }
                let f = grid.flat(&corner);
                for d in 0..dim {
                    lo[d] = lo[d].min(grads[f * dim + d]);
                    hi[d] = hi[d].max(grads[f * dim + d]);
                }
            }
            flags[k] = lo.iter().zip(&hi).all(|(l, h)| *l <= 0.0 && *h >= 0.0);
        }
        let found = clusters(&grid, &flags, cell_limit, true);
        // representative: the corner with the smallest gradient norm
        let representative = |cluster: &Vec<usize>, idx: &mut Vec<usize>, corner: &mut Vec<usize>| -> usize {
            let mut best = (f64::INFINITY, cluster[0]);
            for &cell in cluster {
                grid.index_of(cell, idx);
                for c in 0..corners {
                    for d in 0..dim {
                        corner[d] = idx[d] + ((c >> d) & 1);
                    }
                    let f = grid.flat(corner);
                    let norm: f64 = grads[f * dim..(f + 1) * dim].iter().map(|x| x * x).sum();
                    if norm < best.0 {
                        best = (norm, f);
                    }
                }
            }
            best.1
        };
        let reps: Vec<usize> = found.iter().map(|c| representative(c, &mut idx, &mut corner)).collect();
        if reps.is_empty() {
            Verdict::Indeterminate { witness: None }
        } else if reps.len() > 1 {
            // the cluster holding the global minimum is the legitimate one
            let owner = reps
                .iter()
                .enumerate()
                .min_by(|a, b| distance(&grid, *a.1, global).total_cmp(&distance(&grid, *b.1, global)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            let witness = reps
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != owner)
                .map(|(_, &r)| r)
                .min_by(|&a, &b| values[a].total_cmp(&values[b]))
                .unwrap_or(reps[0]);
            grid.index_of(witness, &mut idx);
            Verdict::Fail { witness: grid.point(&idx) }
        } else if !near_known_min(reps[0], &mut idx) {
            grid.index_of(reps[0], &mut idx);
            Verdict::Fail { witness: grid.point(&idx) }
        } else {
            Verdict::Pass
        }
    };

    let radially_unbounded = growth_check(cost, &grid);

    Ok(AssumptionReport {
        continuity,
        unique_minimum,
        unique_stationary_point,
        radially_unbounded,
        search_box: search_box.clone(),
        grid_n,
    })
}

fn distance(grid: &Grid, a: usize, b: usize) -> f64 {
    let mut ia = vec![0; grid.dim];
    let mut ib = vec![0; grid.dim];
    grid.index_of(a, &mut ia);
    grid.index_of(b, &mut ib);
    let (pa, pb) = (grid.point(&ia), grid.point(&ib));
    pa.iter().zip(&pb).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Forward and backward difference quotients disagree (a kink) or the value
/// is not finite. Returns the offending point.
///
/// For smooth costs the disagreement is about `J'' h` and shrinks with the
/// step; a jump in slope does not, so the mismatch must survive a tenfold
/// step reduction to count.
fn one_sided_mismatch(cost: &CostFunction, p: &[f64], value: f64) -> Option<Vec<f64>> {
    if !value.is_finite() {
        return Some(p.to_vec());
    }
    let mut probe = p.to_vec();
    let mismatch = |d: usize, h: f64, probe: &mut Vec<f64>| -> Option<(f64, f64)> {
        probe[d] = p[d] + h;
        let up = cost.value(probe);
        probe[d] = p[d] - h;
        let down = cost.value(probe);
        probe[d] = p[d];
        let forward = (up - value) / h;
        let backward = (value - down) / h;
        (forward.is_finite() && backward.is_finite())
            .then(|| ((forward - backward).abs(), 0.5 * (forward + backward).abs()))
    };
    for d in 0..p.len() {
        let h = fd_step(p[d]);
        let Some((coarse, slope)) = mismatch(d, h, &mut probe) else { return Some(p.to_vec()) };
        if coarse <= 1e-3 * (1.0 + slope) {
            continue;
        }
        let Some((fine, _)) = mismatch(d, 0.1 * h, &mut probe) else { return Some(p.to_vec()) };
        if fine > 0.5 * coarse {
            return Some(p.to_vec());
        }
    }
    None
}

/// Rays from the known minimizer (or the box centre) to every boundary node:
/// J must be nondecreasing over the outer half of each ray, and the outer
/// increase must not stall relative to the inner one.
fn growth_check(cost: &CostFunction, grid: &Grid) -> Verdict {
    let center = match cost.minimizer() {
        Some(star) if grid.b.contains(star) => star.to_vec(),
        _ => grid.b.center(),
    };
    let j0 = cost.value(&center);
    let fractions = [0.5, 0.625, 0.75, 0.875, 1.0];
    let mut idx = vec![0; grid.dim];
    let mut probe = vec![0.0; grid.dim];
    for k in 0..grid.len() {
        grid.index_of(k, &mut idx);
        if !grid.on_boundary(&idx) {
            continue;
        }
        let edge = grid.point(&idx);
        let along = |f: f64, probe: &mut Vec<f64>| {
            for d in 0..probe.len() {
                probe[d] = center[d] + f * (edge[d] - center[d]);
            }
            cost.value(probe)
        };
        let samples: Vec<f64> = fractions.iter().map(|&f| along(f, &mut probe)).collect();
        let inner = samples[0] - j0;
        let outer = samples[4] - samples[0];
        let monotone = samples.windows(2).all(|w| w[1] >= w[0]);
        let stalled = outer <= 1e-8 * (1.0 + j0.abs()) || outer < 0.1 * inner;
        if !monotone || stalled || !samples.iter().all(|v| v.is_finite()) {
            return Verdict::Indeterminate { witness: Some(edge) };
        }
    }
    Verdict::Pass
}
