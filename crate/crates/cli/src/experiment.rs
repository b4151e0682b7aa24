//! Mode dispatch: each mode reads a resolved config and writes its files
//! into the output directory.

use std::fmt::Display;
use std::path::{Path, PathBuf};

use esc_core::averaging::{convergence_sweep, equilibrium, AverageSystem, Averager, EquilibriumOptions};
use esc_core::dynamics::{GescSystem, RmspescSystem};
use esc_core::integrate::{integrate_fixed, OdeSystem, Trajectory};
use esc_core::lyapunov::{monitor_descent, DescentVerdict, RadiusSolver, SearchSpec};
use esc_core::quadratic::diagonal_jacobians;
use rayon::prelude::*;

use crate::config::{Algorithm, CostSpec, ExperimentConfig, Mode};
use crate::output::{write_rows, write_trajectory};
use crate::plot::emit_plot;
use crate::{CliError, RunSummary};

fn runtime(e: impl Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn initial_state(config: &ExperimentConfig, xi0: f64) -> Vec<f64> {
    let mut x = config.theta0.clone();
    x.extend_from_slice(&config.v0);
    x.push(xi0);
    x
}

/// `simulate.csv` for a single washout start, `simulate_xi{k}.csv` otherwise.
fn file_name(stem: &str, k: usize, count: usize) -> String {
    if count == 1 { format!("{stem}.csv") } else { format!("{stem}_xi{k}.csv") }
}

fn integrate(system: &(dyn OdeSystem + Sync), config: &ExperimentConfig, xi0: f64) -> Result<Trajectory, CliError> {
    integrate_fixed(system, &initial_state(config, xi0), config.t_start, config.t_end, config.step, config.record_every)
        .map_err(runtime)
}

fn full_runs(config: &ExperimentConfig) -> Result<Vec<Trajectory>, CliError> {
    let rms = RmspescSystem { cost: &config.cost, dither: &config.dither, params: &config.params };
    let grad = GescSystem { cost: &config.cost, dither: &config.dither, params: &config.params };
    let system: &(dyn OdeSystem + Sync) = match config.algorithm {
        Algorithm::Rmsprop => &rms,
        Algorithm::Gradient => &grad,
    };
    config.xi_starts().par_iter().map(|&xi0| integrate(system, config, xi0)).collect()
}

fn averager(config: &ExperimentConfig) -> Result<Averager<'_>, CliError> {
    Averager::new(&config.cost, &config.dither, config.nodes).map_err(runtime)
}

fn average_runs(config: &ExperimentConfig) -> Result<Vec<Trajectory>, CliError> {
    if config.algorithm != Algorithm::Rmsprop {
        return Err(CliError::Invalid {
            field: "esc.algorithm".into(),
            message: "averaged dynamics are only available for rmsprop".into(),
        });
    }
    let system = AverageSystem::new(averager(config)?, &config.params).map_err(runtime)?;
    config.xi_starts().par_iter().map(|&xi0| integrate(&system, config, xi0)).collect()
}

fn write_full(config: &ExperimentConfig, traj: &Trajectory, path: &Path) -> Result<(), CliError> {
    let n = config.cost.dim();
    write_trajectory(path, traj, n, |t, x| {
        let probe: Vec<f64> = x[..n].iter().zip(config.dither.dither_value(t)).map(|(a, b)| a + b).collect();
        config.cost.value(&probe)
    })
}

fn write_average(config: &ExperimentConfig, averager: &Averager, traj: &Trajectory, path: &Path) -> Result<(), CliError> {
    let n = config.cost.dim();
    write_trajectory(path, traj, n, |_, x| averager.j_bar(&x[..n]))
}

pub fn run(mode: Mode, config: &ExperimentConfig, out: &Path) -> Result<RunSummary, CliError> {
    match mode {
        Mode::Simulate => simulate(config, out),
        Mode::Average => average(config, out),
        Mode::Compare => compare(config, out),
        Mode::Quadratic => quadratic(config, out),
        Mode::Converge => converge(config, out),
        Mode::Lyapunov => lyapunov(config, out),
        Mode::Plot => plot(config, out),
    }
}

fn simulate(config: &ExperimentConfig, out: &Path) -> Result<RunSummary, CliError> {
    let runs = full_runs(config)?;
    let xi = config.xi_starts();
    let mut summary = RunSummary::default();
    for (k, traj) in runs.iter().enumerate() {
        let path = out.join(file_name("simulate", k, runs.len()));
        write_full(config, traj, &path)?;
        let last = traj.final_state();
        summary.lines.push(format!(
            "xi0 = {}: theta(T) = {:?}, {} rows -> {}",
            xi[k],
            &last[..config.cost.dim()],
            traj.len(),
            path.display()
        ));
        summary.files.push(path);
    }
    Ok(summary)
}

fn average(config: &ExperimentConfig, out: &Path) -> Result<RunSummary, CliError> {
    let runs = average_runs(config)?;
    let averager = averager(config)?;
    let mut summary = RunSummary::default();
    for (k, traj) in runs.iter().enumerate() {
        let path = out.join(file_name("average", k, runs.len()));
        write_average(config, &averager, traj, &path)?;
        summary.lines.push(format!("{} rows -> {}", traj.len(), path.display()));
        summary.files.push(path);
    }
    Ok(summary)
}

fn compare(config: &ExperimentConfig, out: &Path) -> Result<RunSummary, CliError> {
    if config.algorithm != Algorithm::Rmsprop {
        return Err(CliError::Invalid {
            field: "esc.algorithm".into(),
            message: "compare needs the rmsprop averaged dynamics".into(),
        });
    }
    let full = full_runs(config)?;
    let avg = average_runs(config)?;
    let averager = averager(config)?;
    let n = config.cost.dim();
    let xi = config.xi_starts();
    let mut summary = RunSummary::default();
    let mut report = String::new();
    for (k, (f, a)) in full.iter().zip(&avg).enumerate() {
        let full_path = out.join(file_name("compare_full", k, full.len()));
        let avg_path = out.join(file_name("compare_average", k, avg.len()));
        write_full(config, f, &full_path)?;
        write_average(config, &averager, a, &avg_path)?;
        // both runs share the step and stride, so rows line up
        let gap = f
            .states
            .iter()
            .zip(&a.states)
            .flat_map(|(x, y)| x[..n].iter().zip(&y[..n]).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max);
        let line = format!("xi0 = {}: sup |theta - theta_bar| = {gap:.6e}", xi[k]);
        report.push_str(&line);
        report.push('\n');
        summary.lines.push(line);
        summary.files.extend([full_path, avg_path]);
    }
    let path = out.join("compare.txt");
    std::fs::write(&path, report).map_err(|e| CliError::io(&path, e))?;
    summary.files.push(path);
    Ok(summary)
}

fn quadratic(config: &ExperimentConfig, out: &Path) -> Result<RunSummary, CliError> {
    let CostSpec::Quadratic { curvatures, offset, .. } = &config.cost_spec else {
        return Err(CliError::Invalid { field: "cost.builtin".into(), message: "quadratic mode needs a quadratic cost".into() });
    };
    let reports =
        diagonal_jacobians(curvatures, *offset, config.dither.amplitudes(), &config.params).map_err(runtime)?;
    let mut text = String::new();
    let mut lines = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        lines.push(format!("channel {} (H = {}, a = {})", i + 1, curvatures[i], config.dither.amplitudes()[i]));
        for row in &r.matrix {
            lines.push(format!("  [{:>14.6} {:>14.6} {:>14.6}]", row[0], row[1], row[2]));
        }
        let eig: Vec<String> = r.eigenvalues.iter().map(|e| format!("{e:.6}")).collect();
        lines.push(format!("  eigenvalues: {}", eig.join(", ")));
        lines.push(format!("  hurwitz: {}", r.hurwitz));
        lines.push(format!("  large-curvature limit: {:.6}", r.large_curvature_limit));
        lines.push(format!("  small-curvature approximation: {:.6}", r.small_curvature_approx));
    }
    for line in &lines {
        text.push_str(line);
        text.push('\n');
    }
    let path = out.join("quadratic.txt");
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(RunSummary { files: vec![path], lines })
}

fn converge(config: &ExperimentConfig, out: &Path) -> Result<RunSummary, CliError> {
    let rows = convergence_sweep(&config.cost, &config.dither, &config.converge_theta, &config.converge_a0, config.nodes)
        .map_err(runtime)?;
    let table: Vec<[f64; 3]> = rows.iter().map(|r| [r.a0, r.grad_error, r.v_star_max]).collect();
    let path = out.join("converge.csv");
    let header = ["a0", "grad_error", "v_star_max"].map(String::from);
    write_rows(&path, &header, table.iter().map(|r| r.as_slice()))?;
    let lines = rows
        .iter()
        .map(|r| format!("a0 = {:e}: grad_error = {:.6e}, v_star_max = {:.6e}", r.a0, r.grad_error, r.v_star_max))
        .collect();
    Ok(RunSummary { files: vec![path], lines })
}

fn lyapunov(config: &ExperimentConfig, out: &Path) -> Result<RunSummary, CliError> {
    let traj = average_runs(config)?.swap_remove(0);
    let n = config.cost.dim();
    let start = config.cost.minimizer().map_or_else(|| config.theta0.clone(), <[f64]>::to_vec);
    let options = EquilibriumOptions { nodes: Some(config.nodes), ..EquilibriumOptions::default() };
    let eq = equilibrium(&config.cost, &config.dither, &start, &options).map_err(runtime)?;
    let solver = match config.lyapunov_half_width {
        Some(half_width) => {
            let spec = SearchSpec { grid: config.lyapunov_grid, nodes: Some(config.nodes), ..SearchSpec::new(half_width) };
            RadiusSolver::new(&config.cost, &config.dither, &eq, &spec)
        }
        None => {
            let j_star = config.cost.value(&eq.theta_star);
            let level = traj.states.iter().map(|x| config.cost.value(&x[..n]) - j_star).fold(0.0, f64::max);
            SearchSpec::covering(&config.cost, &eq.theta_star, level).and_then(|spec| {
                let spec = SearchSpec { grid: config.lyapunov_grid, nodes: Some(config.nodes), ..spec };
                RadiusSolver::new(&config.cost, &config.dither, &eq, &spec)
            })
        }
    }
    .map_err(runtime)?;
    let report = monitor_descent(&traj, &solver, config.lyapunov_tol).map_err(runtime)?;

    let rows: Vec<[f64; 2]> = report.times.iter().zip(&report.values).map(|(t, v)| [*t, *v]).collect();
    let path = out.join("lyapunov.csv");
    write_rows(&path, &["t".into(), "V".into()], rows.iter().map(|r| r.as_slice()))?;

    let mut lines = vec![
        format!("equilibrium: theta* = {:?}, xi* = {}, v* = {:?}", eq.theta_star, eq.xi_star, eq.v_star),
        format!(
            "V: {:.6e} -> {:.6e} over {} samples (tol {:.3e})",
            report.values[0],
            report.values.last().copied().unwrap_or(f64::NAN),
            report.values.len(),
            report.tol
        ),
    ];
    lines.push(match report.verdict {
        DescentVerdict::Pass => "verdict: PASS".into(),
        DescentVerdict::Fail { t, increase, .. } => format!("verdict: FAIL at t = {t} (V rose by {increase:.3e})"),
    });
    lines.push(match &report.filter_violation {
        None => format!("filter bounds: held (xi {:.6e}, v {:?})", report.xi_bound, report.v_bounds),
        Some(v) => {
            let which = v.channel.map_or("xi".to_string(), |i| format!("v_{}", i + 1));
            format!("filter bounds: violated by {which} at t = {}: {:.6e} > {:.6e}", v.t, v.value, v.bound)
        }
    });
    Ok(RunSummary { files: vec![path], lines })
}

fn plot(config: &ExperimentConfig, out: &Path) -> Result<RunSummary, CliError> {
    let path: PathBuf = out.join("plot.svg");
    emit_plot(&config.plot_csv, &config.plot_columns, &path)?;
    let series = config.plot_csv.len() * config.plot_columns.len();
    Ok(RunSummary { lines: vec![format!("{series} series -> {}", path.display())], files: vec![path] })
}
