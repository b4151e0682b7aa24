//! Experiment configuration.
//!
//! The file is TOML; tables only serve as dotted prefixes, so `[dither]`
//! followed by `omega = 10` and a top-level `dither.omega = 10` mean the same
//! thing. `--set key=value` overrides are applied to the flattened key space
//! before validation. See the README for the full schema.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use esc_core::cost::{parse_cost, CostFunction};
use esc_core::dynamics::EscParams;
use esc_core::signals::DitherConfig;
use toml::Value;

use crate::CliError;

/// What to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Simulate,
    Average,
    Compare,
    Quadratic,
    Converge,
    Lyapunov,
    Plot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Rmsprop,
    Gradient,
}

/// Which cost family the config describes; kept for modes that need the
/// closed form.
#[derive(Debug, Clone, PartialEq)]
pub enum CostSpec {
    Quadratic { curvatures: Vec<f64>, offset: f64, center: Vec<f64> },
    Quartic { center: Vec<f64> },
    Expression { text: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum WashoutStart {
    Values(Vec<f64>),
    /// Multiples of the first measured output `J(θ̂₀ + s(0))`.
    Scales(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub cost_spec: CostSpec,
    pub cost: CostFunction,
    pub dither: DitherConfig,
    pub params: EscParams,
    pub algorithm: Algorithm,
    pub theta0: Vec<f64>,
    pub v0: Vec<f64>,
    pub xi0: WashoutStart,
    pub t_start: f64,
    pub t_end: f64,
    pub step: f64,
    pub record_every: usize,
    pub nodes: usize,
    pub converge_theta: Vec<f64>,
    pub converge_a0: Vec<f64>,
    pub lyapunov_grid: usize,
    pub lyapunov_half_width: Option<f64>,
    pub lyapunov_tol: Option<f64>,
    pub plot_csv: Vec<PathBuf>,
    pub plot_columns: Vec<String>,
}

impl ExperimentConfig {
    /// Initial washout states with the scale form resolved.
    pub fn xi_starts(&self) -> Vec<f64> {
        match &self.xi0 {
            WashoutStart::Values(v) => v.clone(),
            WashoutStart::Scales(s) => {
                let probe: Vec<f64> =
                    self.theta0.iter().zip(self.dither.dither_value(self.t_start)).map(|(a, b)| a + b).collect();
                let y0 = self.cost.value(&probe);
                s.iter().map(|k| k * y0).collect()
            }
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "cost.builtin",
    "cost.expression",
    "cost.dimension",
    "cost.hessian",
    "cost.offset",
    "cost.minimizer",
    "dither.amplitudes",
    "dither.rates",
    "dither.omega",
    "gains.k",
    "gains.epsilon",
    "gains.omega_l",
    "gains.omega_xi",
    "initial.theta",
    "initial.v",
    "initial.xi",
    "initial.xi_scale",
    "time.start",
    "time.end",
    "time.step",
    "time.record_every",
    "quadrature.nodes",
    "converge.theta",
    "converge.a0",
    "lyapunov.grid",
    "lyapunov.half_width",
    "lyapunov.tol",
    "plot.csv",
    "plot.columns",
    "esc.algorithm",
];

const EXCLUSIVE: &[(&str, &str)] = &[("initial.xi", "initial.xi_scale"), ("cost.builtin", "cost.expression")];

/// Flattened `section.key -> value` view of a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, Value>,
    base_dir: PathBuf,
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (key, value) in table {
        let full = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match value {
            Value::Table(inner) => flatten(&full, inner, out),
            other => {
                out.insert(full, other.clone());
            }
        }
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, column)
}

impl RawConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
            CliError::Parse { path: origin.display().to_string(), line, column, message: e.message().to_string() }
        })?;
        let mut entries = BTreeMap::new();
        flatten("", &table, &mut entries);
        let base_dir = origin.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { entries, base_dir })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text, path)
    }

    /// Applies one `key=value` override; the value is read as a TOML value
    /// and falls back to a bare string. Setting one of a mutually exclusive
    /// pair (`initial.xi`/`initial.xi_scale`, `cost.builtin`/`cost.expression`)
    /// drops the other.
    pub fn set(&mut self, assignment: &str) -> Result<(), CliError> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| CliError::Invalid {
            field: assignment.to_string(),
            message: "override must look like key=value".into(),
        })?;
        let key = key.trim();
        let value = value.trim();
        let parsed = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(value.to_string()));
        if let Some(other) = EXCLUSIVE.iter().find_map(|&(a, b)| (key == a).then_some(b).or((key == b).then_some(a))) {
            self.entries.remove(other);
        }
        self.entries.insert(key.to_string(), parsed);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.get(key)
    }

    fn invalid(key: &str, message: impl Into<String>) -> CliError {
        CliError::Invalid { field: key.to_string(), message: message.into() }
    }

    fn f64_opt(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Float(x)) => Ok(Some(*x)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(other) => Err(Self::invalid(key, format!("expected a number, got {}", other.type_str()))),
        }
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, CliError> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    /// A number or an array of numbers.
    fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        let number = |v: &Value| match v {
            Value::Float(x) => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            _ => None,
        };
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| number(v).ok_or_else(|| Self::invalid(key, "expected an array of numbers")))
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(v) => number(v).map(|x| Some(vec![x])).ok_or_else(|| Self::invalid(key, "expected a number or array of numbers")),
        }
    }

    fn int_list(&self, key: &str) -> Result<Option<Vec<i64>>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| v.as_integer().ok_or_else(|| Self::invalid(key, "expected an array of integers")))
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(Value::Integer(i)) => Ok(Some(vec![*i])),
            Some(_) => Err(Self::invalid(key, "expected an integer or array of integers")),
        }
    }

    fn usize_opt(&self, key: &str) -> Result<Option<usize>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i > 0 => Ok(Some(*i as usize)),
            Some(_) => Err(Self::invalid(key, "expected a positive integer")),
        }
    }

    fn str_opt(&self, key: &str) -> Result<Option<&str>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(other) => Err(Self::invalid(key, format!("expected a string, got {}", other.type_str()))),
        }
    }

    fn str_list(&self, key: &str) -> Result<Option<Vec<String>>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(vec![s.clone()])),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| v.as_str().map(str::to_string).ok_or_else(|| Self::invalid(key, "expected an array of strings")))
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(_) => Err(Self::invalid(key, "expected a string or array of strings")),
        }
    }

    /// Broadcasts a scalar to `n` channels and checks array lengths.
    fn per_channel(&self, key: &str, n: usize, default: f64) -> Result<Vec<f64>, CliError> {
        match self.f64_list(key)? {
            None => Ok(vec![default; n]),
            Some(v) if v.len() == 1 => Ok(vec![v[0]; n]),
            Some(v) if v.len() == n => Ok(v),
            Some(v) => Err(Self::invalid(key, format!("expected {n} values, got {}", v.len()))),
        }
    }

    /// Validates everything `mode` needs.
    pub fn resolve(&self, mode: Mode) -> Result<ExperimentConfig, CliError> {
        if let Some(key) = self.entries.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(Self::invalid(key, "unknown key"));
        }
        let builtin = self.str_opt("cost.builtin")?;
        let expression = self.str_opt("cost.expression")?;
        let amplitudes = self.f64_list("dither.amplitudes")?;
        let explicit_dim = match self.get("cost.dimension") {
            None => None,
            Some(_) => Some(self.usize_opt("cost.dimension")?.unwrap_or(1)),
        };
        let n = explicit_dim
            .or_else(|| amplitudes.as_ref().map(Vec::len))
            .or_else(|| self.f64_list("cost.minimizer").ok().flatten().map(|v| v.len()))
            .unwrap_or(1);
        if n == 0 {
            return Err(Self::invalid("cost.dimension", "dimension must be positive"));
        }

        let center = self.per_channel("cost.minimizer", n, 0.0)?;
        let (cost_spec, cost) = match (builtin, expression) {
            (None, None) => return Err(Self::invalid("cost", "missing: set cost.builtin or cost.expression")),
            (Some(_), Some(_)) => return Err(Self::invalid("cost.expression", "cost.builtin and cost.expression are exclusive")),
            (Some("quadratic"), None) => {
                let curvatures = self.per_channel("cost.hessian", n, 1.0)?;
                let offset = self.f64_or("cost.offset", 0.0)?;
                let cost = CostFunction::diagonal_quadratic(&curvatures, offset, &center)
                    .map_err(|e| Self::invalid("cost.hessian", e.to_string()))?;
                (CostSpec::Quadratic { curvatures, offset, center: center.clone() }, cost)
            }
            (Some("quartic"), None) => {
                let cost = CostFunction::shifted_quartic(&center).map_err(|e| Self::invalid("cost.minimizer", e.to_string()))?;
                (CostSpec::Quartic { center: center.clone() }, cost)
            }
            (Some(other), None) => {
                return Err(Self::invalid("cost.builtin", format!("unknown cost `{other}` (expected quadratic or quartic)")))
            }
            (None, Some(text)) => {
                let mut cost = parse_cost(text, n).map_err(|e| Self::invalid("cost.expression", e.to_string()))?;
                if self.get("cost.minimizer").is_some() {
                    cost = cost.with_minimizer(&center).map_err(|e| Self::invalid("cost.minimizer", e.to_string()))?;
                }
                (CostSpec::Expression { text: text.to_string() }, cost)
            }
        };

        let amplitudes = match amplitudes {
            None => vec![0.02; n],
            Some(v) if v.len() == n => v,
            Some(v) => return Err(Self::invalid("dither.amplitudes", format!("expected {n} values, got {}", v.len()))),
        };
        let rates = self.int_list("dither.rates")?.unwrap_or_else(|| (1..=n as i64).collect());
        let omega = self.f64_or("dither.omega", 10.0)?;
        let dither = DitherConfig::new(&amplitudes, &rates, omega).map_err(|e| {
            let field = match e {
                esc_core::signals::DitherError::InvalidOmega(_) => "dither.omega",
                esc_core::signals::DitherError::NonPositiveRate { .. } | esc_core::signals::DitherError::DuplicateRate { .. } => {
                    "dither.rates"
                }
                esc_core::signals::DitherError::LengthMismatch { .. } => "dither.rates",
                _ => "dither.amplitudes",
            };
            Self::invalid(field, e.to_string())
        })?;

        let params = EscParams::new(
            self.f64_or("gains.k", 1.0)?,
            self.f64_or("gains.epsilon", 0.05)?,
            self.per_channel("gains.omega_l", n, 0.25)?,
            self.f64_or("gains.omega_xi", 1.0)?,
        )
        .map_err(|e| {
            let field = match &e {
                esc_core::dynamics::DynamicsError::InvalidGain { name, .. } => format!("gains.{name}"),
                _ => "gains".to_string(),
            };
            CliError::Invalid { field, message: e.to_string() }
        })?;

        let algorithm = match self.str_opt("esc.algorithm")? {
            None | Some("rmsprop") => Algorithm::Rmsprop,
            Some("gradient") => Algorithm::Gradient,
            Some(other) => return Err(Self::invalid("esc.algorithm", format!("unknown algorithm `{other}` (expected rmsprop or gradient)"))),
        };

        let theta0 = self.per_channel("initial.theta", n, 2.0)?;
        let v0 = self.per_channel("initial.v", n, 0.81)?;
        if let Some(bad) = v0.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Self::invalid("initial.v", format!("must be nonnegative, got {bad}")));
        }
        let xi0 = match (self.f64_list("initial.xi")?, self.f64_list("initial.xi_scale")?) {
            (Some(_), Some(_)) => return Err(Self::invalid("initial.xi_scale", "initial.xi and initial.xi_scale are exclusive")),
            (Some(v), None) => WashoutStart::Values(v),
            (None, Some(s)) => WashoutStart::Scales(s),
            (None, None) => WashoutStart::Values(vec![0.0]),
        };
        if matches!(&xi0, WashoutStart::Values(v) | WashoutStart::Scales(v) if v.is_empty()) {
            return Err(Self::invalid("initial.xi", "needs at least one value"));
        }

        let t_start = self.f64_or("time.start", 0.0)?;
        let t_end = self.f64_or("time.end", 100.0)?;
        if !(t_start.is_finite() && t_end.is_finite() && t_end > t_start) {
            return Err(Self::invalid("time.end", format!("must exceed time.start ({t_start}), got {t_end}")));
        }
        let max_step = dither.max_step();
        let step = self.f64_or("time.step", max_step)?;
        if !(step.is_finite() && step > 0.0) {
            return Err(Self::invalid("time.step", format!("must be positive, got {step}")));
        }
        if step > max_step * (1.0 + 1e-12) {
            return Err(Self::invalid("time.step", format!("{step} exceeds the limit T/(40 r_max) = {max_step}")));
        }
        let record_every = self.usize_opt("time.record_every")?.unwrap_or(1);

        let min_nodes = 8 * dither.r_max() as usize;
        let nodes = self.usize_opt("quadrature.nodes")?.unwrap_or(256 * dither.r_max() as usize);
        if nodes < min_nodes {
            return Err(Self::invalid("quadrature.nodes", format!("needs at least {min_nodes}, got {nodes}")));
        }

        let converge_theta = match self.f64_list("converge.theta")? {
            None => theta0.clone(),
            Some(v) if v.len() == n => v,
            Some(v) => return Err(Self::invalid("converge.theta", format!("expected {n} values, got {}", v.len()))),
        };
        let converge_a0 = self.f64_list("converge.a0")?.unwrap_or_default();
        if mode == Mode::Converge {
            if converge_a0.is_empty() {
                return Err(Self::invalid("converge.a0", "missing: list the amplitudes to sweep"));
            }
            if converge_a0.iter().any(|a| !(a.is_finite() && *a > 0.0)) || converge_a0.windows(2).any(|w| w[1] >= w[0]) {
                return Err(Self::invalid("converge.a0", "amplitudes must be positive and strictly decreasing"));
            }
        }

        let lyapunov_grid = self.usize_opt("lyapunov.grid")?.unwrap_or(401);
        if lyapunov_grid < 3 {
            return Err(Self::invalid("lyapunov.grid", "needs at least 3 points per axis"));
        }
        let lyapunov_half_width = self.f64_opt("lyapunov.half_width")?;
        if let Some(hw) = lyapunov_half_width {
            if !(hw.is_finite() && hw > 0.0) {
                return Err(Self::invalid("lyapunov.half_width", "must be positive"));
            }
        }
        let lyapunov_tol = self.f64_opt("lyapunov.tol")?;

        let plot_csv: Vec<PathBuf> =
            self.str_list("plot.csv")?.unwrap_or_default().into_iter().map(|p| self.base_dir.join(p)).collect();
        let plot_columns = self.str_list("plot.columns")?.unwrap_or_default();
        if mode == Mode::Plot {
            if plot_csv.is_empty() {
                return Err(Self::invalid("plot.csv", "missing: name at least one CSV file"));
            }
            if plot_columns.is_empty() {
                return Err(Self::invalid("plot.columns", "missing: name at least one column"));
            }
        }
        if mode == Mode::Quadratic && !matches!(cost_spec, CostSpec::Quadratic { .. }) {
            return Err(Self::invalid("cost.builtin", "quadratic mode needs cost.builtin = \"quadratic\""));
        }

        Ok(ExperimentConfig {
            cost_spec,
            cost,
            dither,
            params,
            algorithm,
            theta0,
            v0,
            xi0,
            t_start,
            t_end,
            step,
            record_every,
            nodes,
            converge_theta,
            converge_a0,
            lyapunov_grid,
            lyapunov_half_width,
            lyapunov_tol,
            plot_csv,
            plot_columns,
        })
    }
}
