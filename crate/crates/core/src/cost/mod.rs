//! Cost functions `J(θ)` measured by the extremum seeking loop.
//!
//! A [`CostFunction`] is a cheap, immutable, thread-safe handle. The builtin
//! catalog covers the quadratic and quartic families analysed by this crate;
//! arbitrary expressions come in through [`parse_cost`] and arbitrary closures
//! through [`CostFunction::from_fn`].

mod assumptions;
pub mod expr;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use assumptions::{check_assumptions, AssumptionReport, SearchBox, Verdict};
pub use expr::ParseError;

use expr::Expr;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("expected a point of dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid cost parameter: {0}")]
    InvalidParameter(String),
    #[error("hessian is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("hessian is not positive definite")]
    NotPositiveDefinite,
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("search box is degenerate along axis {axis}")]
    DegenerateBox { axis: usize },
    #[error("assumption grid has {points} points, limit is {limit}")]
    GridTooLarge { points: usize, limit: usize },
}

type ValueFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradientFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
enum Kind {
    /// `offset + ½ (θ-c)ᵀ H (θ-c)`, `H` row-major
    Quadratic { hessian: Vec<f64>, offset: f64, center: Vec<f64> },
    /// `Σ (θ_i - c_i)⁴ / 24`
    Quartic { center: Vec<f64> },
    Expression(Arc<Expr>),
    Custom { value: ValueFn, gradient: Option<GradientFn> },
}

/// Scalar field `J: Rⁿ → R` with an optional analytic gradient and an
/// optional known minimizer.
#[derive(Clone)]
pub struct CostFunction {
    dim: usize,
    kind: Kind,
    minimizer: Option<Vec<f64>>,
    name: String,
}

impl fmt::Debug for CostFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostFunction")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("minimizer", &self.minimizer)
            .finish()
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<(), CostError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CostError::InvalidParameter(format!("{what} must be finite")))
    }
}

impl CostFunction {
    /// Scalar quadratic `offset + ½ H θ²`.
    pub fn scalar_quadratic(curvature: f64, offset: f64) -> Result<Self, CostError> {
        Self::diagonal_quadratic(&[curvature], offset, &[0.0])
    }

    /// `offset + ½ Σ h_i (θ_i - c_i)²` with every `h_i > 0`.
    pub fn diagonal_quadratic(curvatures: &[f64], offset: f64, center: &[f64]) -> Result<Self, CostError> {
        let n = curvatures.len();
        if n == 0 {
            return Err(CostError::InvalidParameter("quadratic needs at least one curvature".into()));
        }
        if let Some(h) = curvatures.iter().find(|h| !(h.is_finite() && **h > 0.0)) {
            return Err(CostError::InvalidParameter(format!("curvature must be positive, got {h}")));
        }
        let mut hessian = vec![0.0; n * n];
        for (i, h) in curvatures.iter().enumerate() {
            hessian[i * n + i] = *h;
        }
        Self::quadratic(&hessian, offset, center)
    }

    /// `offset + ½ (θ-c)ᵀ H (θ-c)` for a symmetric positive definite `H`
    /// given row-major; the dimension is `center.len()`.
    pub fn quadratic(hessian: &[f64], offset: f64, center: &[f64]) -> Result<Self, CostError> {
        let n = center.len();
        if n == 0 || hessian.len() != n * n {
            return Err(CostError::InvalidParameter(format!(
                "hessian needs {} entries for dimension {n}, got {}",
                n * n,
                hessian.len()
            )));
        }
        check_finite(hessian, "hessian")?;
        check_finite(center, "minimizer")?;
        check_finite(&[offset], "offset")?;
        for row in 0..n {
            for col in row + 1..n {
                let (a, b) = (hessian[row * n + col], hessian[col * n + row]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(CostError::NotSymmetric { row, col });
                }
            }
        }
        if !is_positive_definite(hessian, n) {
            return Err(CostError::NotPositiveDefinite);
        }
        Ok(Self {
            dim: n,
            kind: Kind::Quadratic { hessian: hessian.to_vec(), offset, center: center.to_vec() },
            minimizer: Some(center.to_vec()),
            name: "quadratic".into(),
        })
    }

    /// Scalar quartic `θ⁴ / 24`.
    pub fn quartic() -> Self {
        Self {
            dim: 1,
            kind: Kind::Quartic { center: vec![0.0] },
            minimizer: Some(vec![0.0]),
            name: "quartic".into(),
        }
    }

    /// `Σ (θ_i - c_i)⁴ / 24`.
    pub fn shifted_quartic(center: &[f64]) -> Result<Self, CostError> {
        if center.is_empty() {
            return Err(CostError::InvalidParameter("quartic needs at least one coordinate".into()));
        }
        check_finite(center, "minimizer")?;
        Ok(Self {
            dim: center.len(),
            kind: Kind::Quartic { center: center.to_vec() },
            minimizer: Some(center.to_vec()),
            name: "shifted_quartic".into(),
        })
    }

    /// Wraps an arbitrary evaluator. Gradients fall back to finite differences
    /// unless [`with_gradient`](Self::with_gradient) supplies one.
    pub fn from_fn<F>(dim: usize, name: &str, value: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            dim,
            kind: Kind::Custom { value: Arc::new(value), gradient: None },
            minimizer: None,
            name: name.into(),
        }
    }

    /// Attaches an analytic gradient to a closure-backed cost. No effect on
    /// builtin families, which already carry one.
    pub fn with_gradient<G>(mut self, gradient: G) -> Self
    where
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if let Kind::Custom { gradient: slot, .. } = &mut self.kind {
            *slot = Some(Arc::new(gradient));
        }
        self
    }

    pub fn with_minimizer(mut self, minimizer: &[f64]) -> Result<Self, CostError> {
        self.check_dim(minimizer)?;
        self.minimizer = Some(minimizer.to_vec());
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn minimizer(&self) -> Option<&[f64]> {
        self.minimizer.as_deref()
    }

    pub fn has_analytic_gradient(&self) -> bool {
        match &self.kind {
            Kind::Quadratic { .. } | Kind::Quartic { .. } => true,
            Kind::Custom { gradient, .. } => gradient.is_some(),
            Kind::Expression(_) => false,
        }
    }

    fn check_dim(&self, theta: &[f64]) -> Result<(), CostError> {
        if theta.len() == self.dim {
            Ok(())
        } else {
            Err(CostError::DimensionMismatch { expected: self.dim, got: theta.len() })
        }
    }

    /// `J(θ)` with a dimension check.
    pub fn eval(&self, theta: &[f64]) -> Result<f64, CostError> {
        self.check_dim(theta)?;
        Ok(self.value(theta))
    }

    /// `J(θ)` for a point already known to have the right dimension.
    pub fn value(&self, theta: &[f64]) -> f64 {
        debug_assert_eq!(theta.len(), self.dim);
        match &self.kind {
            Kind::Quadratic { hessian, offset, center } => {
                let n = self.dim;
                let mut acc = 0.0;
                for i in 0..n {
                    let di = theta[i] - center[i];
                    let row = &hessian[i * n..(i + 1) * n];
                    let mut inner = 0.0;
                    for j in 0..n {
                        inner += row[j] * (theta[j] - center[j]);
                    }
                    acc += di * inner;
                }
                offset + 0.5 * acc
            }
            Kind::Quartic { center } => {
                theta.iter().zip(center).map(|(t, c)| (t - c).powi(4)).sum::<f64>() / 24.0
            }
            Kind::Expression(e) => e.eval(theta),
            Kind::Custom { value, .. } => value(theta),
        }
    }

    /// `∇J(θ)`: analytic when available, central differences otherwise.
    pub fn grad(&self, theta: &[f64]) -> Result<Vec<f64>, CostError> {
        self.check_dim(theta)?;
        let mut out = vec![0.0; self.dim];
        self.grad_into(theta, &mut out);
        Ok(out)
    }

    pub fn grad_into(&self, theta: &[f64], out: &mut [f64]) {
        let n = self.dim;
        match &self.kind {
            Kind::Quadratic { hessian, center, .. } => {
                for i in 0..n {
                    out[i] = (0..n).map(|j| hessian[i * n + j] * (theta[j] - center[j])).sum();
                }
            }
            Kind::Quartic { center } => {
                for i in 0..n {
                    out[i] = (theta[i] - center[i]).powi(3) / 6.0;
                }
            }
            Kind::Custom { gradient: Some(g), .. } => g(theta, out),
            _ => self.fd_gradient_into(theta, out),
        }
    }

    /// Central finite-difference gradient with step `1e-5 (1 + |θ_i|)`.
    pub fn fd_gradient(&self, theta: &[f64]) -> Result<Vec<f64>, CostError> {
        self.check_dim(theta)?;
        let mut out = vec![0.0; self.dim];
        self.fd_gradient_into(theta, &mut out);
        Ok(out)
    }

    fn fd_gradient_into(&self, theta: &[f64], out: &mut [f64]) {
        let mut probe = theta.to_vec();
        for i in 0..self.dim {
            let h = fd_step(theta[i]);
            probe[i] = theta[i] + h;
            let up = self.value(&probe);
            probe[i] = theta[i] - h;
            let down = self.value(&probe);
            probe[i] = theta[i];
            out[i] = (up - down) / (2.0 * h);
        }
    }

    /// Expression text that [`parse_cost`] turns back into the same function.
    /// `None` for closure-backed costs.
    pub fn render(&self) -> Option<String> {
        let var = |i: usize, c: f64| {
            if c == 0.0 {
                format!("theta{}", i + 1)
            } else {
                format!("(theta{} - {})", i + 1, num(c))
            }
        };
        match &self.kind {
            Kind::Quadratic { hessian, offset, center } => {
                let n = self.dim;
                let mut terms = Vec::new();
                for i in 0..n {
                    for j in 0..n {
                        let h = hessian[i * n + j];
                        if h == 0.0 {
                            continue;
                        }
                        if i == j {
                            terms.push(format!("{} * {}^2", num(h), var(i, center[i])));
                        } else {
                            terms.push(format!("{} * {} * {}", num(h), var(i, center[i]), var(j, center[j])));
                        }
                    }
                }
                Some(format!("{} + 0.5 * ({})", num(*offset), terms.join(" + ")))
            }
            Kind::Quartic { center } => {
                let terms: Vec<String> =
                    center.iter().enumerate().map(|(i, c)| format!("{}^4", var(i, *c))).collect();
                Some(format!("({}) / 24", terms.join(" + ")))
            }
            Kind::Expression(e) => Some(e.to_string()),
            Kind::Custom { .. } => None,
        }
    }
}

fn num(v: f64) -> String {
    if v < 0.0 {
        format!("({v})")
    } else {
        format!("{v}")
    }
}

pub(crate) fn fd_step(x: f64) -> f64 {
    1e-5 * (1.0 + x.abs())
}

fn is_positive_definite(a: &[f64], n: usize) -> bool {
    // Cholesky; fails on the first non-positive pivot
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    true
}

/// Builds a cost from an expression over `theta1..theta{dim}`.
pub fn parse_cost(text: &str, dim: usize) -> Result<CostFunction, CostError> {
    if dim == 0 {
        return Err(CostError::InvalidParameter("dimension must be at least 1".into()));
    }
    let e = expr::parse_expr(text, dim)?;
    Ok(CostFunction { dim, kind: Kind::Expression(Arc::new(e)), minimizer: None, name: "expression".into() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn builtin_values() {
        let q = CostFunction::quartic();
        assert_abs_diff_eq!(q.eval(&[2.0]).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        let p = CostFunction::scalar_quadratic(1.0, 3.0).unwrap();
        assert_eq!(p.eval(&[1.0]).unwrap(), 3.5);
        for cost in [q, p, CostFunction::shifted_quartic(&[1.0, -2.0]).unwrap()] {
            let star = cost.minimizer().unwrap().to_vec();
            let at_min = cost.eval(&star).unwrap();
            for k in 0..20 {
                let probe: Vec<f64> = star.iter().map(|s| s + 0.1 * (k as f64 - 9.5)).collect();
                assert!(cost.eval(&probe).unwrap() > at_min);
            }
        }
    }

    #[test]
    fn builtin_gradients() {
        assert_abs_diff_eq!(CostFunction::quartic().grad(&[2.0]).unwrap()[0], 4.0 / 3.0, epsilon = 1e-15);
        let p = CostFunction::scalar_quadratic(1.0, 3.0).unwrap();
        assert_eq!(p.grad(&[1.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn finite_difference_matches_quartic_gradient() {
        let q = CostFunction::quartic();
        let analytic = q.grad(&[0.7]).unwrap()[0];
        let fd = q.fd_gradient(&[0.7]).unwrap()[0];
        assert!((analytic - fd).abs() <= 1e-6, "{analytic} vs {fd}");
    }

    #[test]
    fn dimension_is_checked() {
        let q = CostFunction::quartic();
        assert_eq!(q.eval(&[1.0, 2.0]), Err(CostError::DimensionMismatch { expected: 1, got: 2 }));
        assert!(q.grad(&[]).is_err());
    }

    #[test]
    fn quadratic_validation() {
        assert!(matches!(CostFunction::scalar_quadratic(0.0, 0.0), Err(CostError::InvalidParameter(_))));
        assert_eq!(
            CostFunction::quadratic(&[2.0, 1.0, 0.5, 2.0], 0.0, &[0.0, 0.0]).unwrap_err(),
            CostError::NotSymmetric { row: 0, col: 1 }
        );
        assert_eq!(
            CostFunction::quadratic(&[1.0, 2.0, 2.0, 1.0], 0.0, &[0.0, 0.0]).unwrap_err(),
            CostError::NotPositiveDefinite
        );
        let full = CostFunction::quadratic(&[2.0, 0.5, 0.5, 1.0], 1.0, &[1.0, -1.0]).unwrap();
        // 1 + ½ [1, 1] H [1, 1]ᵀ = 1 + ½ (2 + 0.5 + 0.5 + 1)
        assert_abs_diff_eq!(full.eval(&[2.0, 0.0]).unwrap(), 3.0, epsilon = 1e-15);
    }

    #[test]
    fn parsed_costs_match_builtins() {
        let quartic = parse_cost("theta1^4 / 24", 1).unwrap();
        let quadratic = parse_cost("3 + 0.5*theta1^2", 1).unwrap();
        for x in [-2.5, -0.3, 0.0, 0.7, 2.0] {
            assert_abs_diff_eq!(quartic.eval(&[x]).unwrap(), CostFunction::quartic().eval(&[x]).unwrap(), epsilon = 1e-15);
            assert_abs_diff_eq!(
                quadratic.eval(&[x]).unwrap(),
                CostFunction::scalar_quadratic(1.0, 3.0).unwrap().eval(&[x]).unwrap(),
                epsilon = 1e-15
            );
        }
        assert!(!quartic.has_analytic_gradient());
        assert!(matches!(parse_cost("theta1 + (", 1), Err(CostError::Parse(ParseError::Syntax { position: 11, .. }))));
    }

    #[test]
    fn closure_costs() {
        let c = CostFunction::from_fn(2, "bowl", |t| t[0] * t[0] + 2.0 * t[1] * t[1]);
        assert!(!c.has_analytic_gradient());
        let g = c.grad(&[1.0, 1.0]).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        let c = c.with_gradient(|t, g| {
            g[0] = 2.0 * t[0];
            g[1] = 4.0 * t[1];
        });
        assert!(c.has_analytic_gradient());
        assert!(c.render().is_none());
        assert!(c.clone().with_minimizer(&[0.0]).is_err());
        assert_eq!(c.with_minimizer(&[0.0, 0.0]).unwrap().minimizer(), Some(&[0.0, 0.0][..]));
    }

    fn builtins() -> Vec<CostFunction> {
        vec![
            CostFunction::quartic(),
            CostFunction::scalar_quadratic(4.0, 3.0).unwrap(),
            CostFunction::diagonal_quadratic(&[0.5, 2.0], -1.0, &[0.25, -1.5]).unwrap(),
            CostFunction::quadratic(&[2.0, -0.7, 0.3, -0.7, 1.5, 0.2, 0.3, 0.2, 0.9], 0.5, &[1.0, 0.0, -2.0]).unwrap(),
            CostFunction::shifted_quartic(&[1.0, -0.5]).unwrap(),
        ]
    }

    fn point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-3.0f64..3.0, dim)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn analytic_gradient_matches_central_differences(p in point(3)) {
            for cost in builtins() {
                let theta = &p[..cost.dim()];
                let g = cost.grad(theta).unwrap();
                let fd = cost.fd_gradient(theta).unwrap();
                let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                for (a, b) in g.iter().zip(&fd) {
                    prop_assert!((a - b).abs() <= 1e-6 * (1.0 + norm), "{}: {a} vs {b}", cost.name());
                }
            }
        }

        #[test]
        fn rendered_builtins_reparse_to_same_values(p in point(3)) {
            for cost in builtins() {
                let parsed = parse_cost(&cost.render().unwrap(), cost.dim()).unwrap();
                let theta = &p[..cost.dim()];
                let (a, b) = (cost.eval(theta).unwrap(), parsed.eval(theta).unwrap());
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{}: {a} vs {b}", cost.name());
            }
        }
    }
}
