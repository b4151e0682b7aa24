//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Runs without the libtest harness so the verdict lines always print.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use esc_core::averaging::{avg_maps, convergence_sweep, equilibrium, AverageSystem, Averager, EquilibriumOptions};
use esc_core::cost::CostFunction;
use esc_core::dynamics::{EscParams, GescSystem, RmspescSystem};
use esc_core::integrate::{integrate_fixed, FnSystem, OdeSystem, Trajectory};
use esc_core::lyapunov::{monitor_descent, RadiusSolver, SearchSpec};
use esc_core::quadratic::{fourier_coeffs, quad_avg_maps, quad_jacobian, QuadraticModel};
use esc_core::signals::DitherConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Closed-form agreement of the quadrature, relative.
const CLOSED_FORM_REL: f64 = 1e-9;
const EQUILIBRIUM_ABS: f64 = 1e-9;
const JACOBIAN_ABS: f64 = 1e-6;
const LARGE_H_REL: f64 = 0.05;
const SMALL_H_REL: f64 = 0.01;
const RATE_RATIO: (f64, f64) = (3.8, 4.2);
const V_STAR_FLOOR: f64 = 1e-10;
const FINAL_THETA_ABS: f64 = 0.3;
const RK4_RATIO: (f64, f64) = (14.0, 18.0);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

/// Fig. 1 gains: k = 1, ε = 0.05, ω_l = 0.25, ω_ξ = 1.
fn gains() -> EscParams {
    EscParams::new(1.0, 0.05, vec![0.25], 1.0).unwrap()
}

fn relative(num: f64, exact: f64) -> f64 {
    if exact == 0.0 {
        num.abs()
    } else {
        ((num - exact) / exact).abs()
    }
}

fn quadrature_vs_closed_form() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let h = rng.gen_range(0.1..=10.0);
        let a = rng.gen_range(0.01..=0.5);
        let theta = rng.gen_range(-3.0..=3.0);
        let xi = rng.gen_range(-5.0..=5.0);
        let model = QuadraticModel::new(h, 0.0, a).unwrap();
        let cost = CostFunction::scalar_quadratic(h, 0.0).unwrap();
        let dither = DitherConfig::scalar(a, 1.0).unwrap();
        let maps = avg_maps(&cost, &dither, &[theta], xi, 256).unwrap();
        let (g, g2) = quad_avg_maps(&model, theta, xi);
        let b0 = fourier_coeffs(&model, theta).b0;
        worst = worst
            .max(relative(maps.j_bar, b0))
            .max(relative(maps.g_bar[0], g))
            .max(relative(maps.g2_bar[0], g2));
    }
    outcome(worst <= CLOSED_FORM_REL, format!("max relative error {worst:.2e} over 50 samples"))
}

fn quadratic_equilibrium() -> Outcome {
    let cost = CostFunction::scalar_quadratic(1.0, 3.0).unwrap();
    let dither = DitherConfig::scalar(0.2, 10.0).unwrap();
    let eq = match equilibrium(&cost, &dither, &[1.0], &EquilibriumOptions::default()) {
        Ok(eq) => eq,
        Err(e) => return outcome(false, e.to_string()),
    };
    let ok = eq.theta_star[0].abs() <= EQUILIBRIUM_ABS
        && (eq.xi_star - 3.01).abs() <= EQUILIBRIUM_ABS
        && (eq.v_star[0] - 0.0025).abs() <= EQUILIBRIUM_ABS;
    outcome(ok, format!("θ* = {:.3e}, ξ* = {:.12}, v* = {:.12}", eq.theta_star[0], eq.xi_star, eq.v_star[0]))
}

fn jacobian_and_limits() -> Outcome {
    let params = gains();
    let mut worst: f64 = 0.0;
    for (h, a) in [(4.0, 0.02), (1.0, 0.2)] {
        let model = QuadraticModel::new(h, 0.0, a).unwrap();
        let report = quad_jacobian(&model, &params).unwrap();
        let cost = CostFunction::scalar_quadratic(h, 0.0).unwrap();
        let dither = DitherConfig::scalar(a, 10.0).unwrap();
        let eq = equilibrium(&cost, &dither, &[0.0], &EquilibriumOptions::default()).unwrap();
        let system = AverageSystem::new(Averager::new(&cost, &dither, 256).unwrap(), &params).unwrap();
        // state layout (θ, v, ξ); Jacobian layout (θ, ξ, v)
        let base = [eq.theta_star[0], eq.v_star[0], eq.xi_star];
        let layout = [0usize, 2, 1];
        for (col, &sc) in layout.iter().enumerate() {
            let step = 1e-6 * base[sc].abs().max(1e-3);
            let (mut up, mut down) = (base, base);
            up[sc] += step;
            down[sc] -= step;
            let (mut fu, mut fd) = ([0.0; 3], [0.0; 3]);
            system.rhs(0.0, &up, &mut fu);
            system.rhs(0.0, &down, &mut fd);
            for (row, &sr) in layout.iter().enumerate() {
                let numeric = (fu[sr] - fd[sr]) / (2.0 * step);
                worst = worst.max((numeric - report.matrix[row][col]).abs());
            }
        }
    }
    let large = quad_jacobian(&QuadraticModel::new(1e4, 0.0, 0.02).unwrap(), &params).unwrap();
    let small = quad_jacobian(&QuadraticModel::new(1e-3, 0.0, 0.02).unwrap(), &params).unwrap();
    let large_rel = relative(large.matrix[0][0], -200.0);
    let small_rel = relative(small.matrix[0][0], small.small_curvature_approx);
    outcome(
        worst <= JACOBIAN_ABS && large_rel <= LARGE_H_REL && small_rel <= SMALL_H_REL,
        format!(
            "max entry gap {worst:.2e}; (1,1) at H=1e4 is {:.4} ({:.2}% from -200); at H=1e-3 is {:.6} ({:.3}% from -(k/ε)H)",
            large.matrix[0][0],
            100.0 * large_rel,
            small.matrix[0][0],
            100.0 * small_rel
        ),
    )
}

fn small_amplitude_rates() -> Outcome {
    let cost = CostFunction::quartic();
    let dither = DitherConfig::scalar(0.08, 10.0).unwrap();
    let a0 = [0.08, 0.04, 0.02, 0.01];
    let rows = match convergence_sweep(&cost, &dither, &[2.0], &a0, 256) {
        Ok(rows) => rows,
        Err(e) => return outcome(false, e.to_string()),
    };
    let ratios: Vec<f64> = rows.windows(2).map(|w| w[0].grad_error / w[1].grad_error).collect();
    let analytic_ok = rows.iter().all(|r| relative(r.grad_error, r.a0 * r.a0 * 2.0 / 8.0) < 1e-6);
    let ratios_ok = ratios.iter().all(|r| (RATE_RATIO.0..=RATE_RATIO.1).contains(r));
    let v: Vec<f64> = rows.iter().map(|r| r.v_star_max).collect();
    let decreasing = v.windows(2).all(|w| w[1] < w[0]);
    let last = *v.last().unwrap();
    outcome(
        analytic_ok && ratios_ok && decreasing && last < V_STAR_FLOOR,
        format!("error ratios {ratios:.4?}; v* = [{}]", v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")),
    )
}

/// Fig. 1 run of either loop on the quartic.
fn quartic_run(dither: &DitherConfig, xi0: f64, gradient: bool, stride: usize) -> Trajectory {
    let cost = CostFunction::quartic();
    let params = gains();
    let x0 = [2.0, 0.81, xi0];
    let h = dither.max_step();
    if gradient {
        integrate_fixed(&GescSystem { cost: &cost, dither, params: &params }, &x0, 0.0, 100.0, h, stride).unwrap()
    } else {
        integrate_fixed(&RmspescSystem { cost: &cost, dither, params: &params }, &x0, 0.0, 100.0, h, stride).unwrap()
    }
}

fn averaging_gap() -> Outcome {
    let cost = CostFunction::quartic();
    let params = gains();
    let mut gaps = Vec::new();
    for omega in [10.0, 20.0, 40.0] {
        let dither = DitherConfig::scalar(0.02, omega).unwrap();
        let full = quartic_run(&dither, 0.0, false, 1);
        let system = AverageSystem::new(Averager::with_default_nodes(&cost, &dither).unwrap(), &params).unwrap();
        let avg = integrate_fixed(&system, &[2.0, 0.81, 0.0], 0.0, 100.0, dither.max_step(), 1).unwrap();
        let gap = full
            .states
            .iter()
            .zip(&avg.states)
            .map(|(a, b)| (a[0] - b[0]).abs())
            .fold(0.0, f64::max);
        gaps.push(gap);
    }
    let monotone = gaps.windows(2).all(|w| w[1] < w[0]);
    outcome(monotone, format!("sup |θ̂ - θ̄| at ω = 10, 20, 40: {gaps:.4?}"))
}

/// Largest `|dθ̂/dt|` over recorded samples with `t ≤ 5`.
fn peak_rate(system: &dyn OdeSystem, traj: &Trajectory) -> f64 {
    let mut dx = vec![0.0; system.dim()];
    traj.times
        .iter()
        .zip(&traj.states)
        .take_while(|(t, _)| **t <= 5.0)
        .map(|(t, x)| {
            system.rhs(*t, x, &mut dx);
            dx[0].abs()
        })
        .fold(0.0, f64::max)
}

fn reference_runs() -> Outcome {
    let cost = CostFunction::quartic();
    let params = gains();
    let dither = DitherConfig::scalar(0.02, 10.0).unwrap();
    let y0 = cost.value(&[2.0]);
    let mut finals = Vec::new();
    let mut rms_peak = 0.0;
    for scale in [0.0, 1.0, 2.0] {
        let traj = quartic_run(&dither, scale * y0, false, 1);
        finals.push(traj.final_state()[0]);
        if scale == 0.0 {
            rms_peak = peak_rate(&RmspescSystem { cost: &cost, dither: &dither, params: &params }, &traj);
        }
    }
    let gesc = quartic_run(&dither, 0.0, true, 1);
    let gesc_peak = peak_rate(&GescSystem { cost: &cost, dither: &dither, params: &params }, &gesc);
    let finals_ok = finals.iter().all(|t| t.abs() < FINAL_THETA_ABS && t.abs() < 2.0 / 4.0);
    outcome(
        finals_ok && rms_peak < gesc_peak,
        format!("θ̂(100) for ξ₀ = 0, y₀, 2y₀: {finals:.4?}; peak |dθ̂/dt| on [0,5]: RMSprop {rms_peak:.3} vs gradient {gesc_peak:.3}"),
    )
}

struct DescentRun {
    name: &'static str,
    descent: bool,
    bounded: bool,
    detail: String,
}

fn descent_runs() -> Vec<DescentRun> {
    let params = gains();
    let cases = [
        ("quadratic", CostFunction::scalar_quadratic(1.0, 3.0).unwrap(), 0.2),
        ("quartic", CostFunction::quartic(), 0.02),
    ];
    cases
        .into_iter()
        .map(|(name, cost, a)| {
            let dither = DitherConfig::scalar(a, 10.0).unwrap();
            let eq = equilibrium(&cost, &dither, &[0.0], &EquilibriumOptions::default()).unwrap();
            let system = AverageSystem::new(Averager::with_default_nodes(&cost, &dither).unwrap(), &params).unwrap();
            let x0 = [2.0, 0.81, 0.0];
            let traj = integrate_fixed(&system, &x0, 0.0, 100.0, dither.max_step(), 1).unwrap();
            let level = cost.value(&[2.0]) - cost.value(&eq.theta_star);
            let solver = RadiusSolver::covering(&cost, &dither, &eq, level).unwrap();
            match monitor_descent(&traj, &solver, None) {
                Ok(report) => DescentRun {
                    name,
                    descent: report.verdict.is_pass(),
                    bounded: report.filter_violation.is_none(),
                    detail: format!(
                        "{name}: V {:.4} -> {:.3e} over {} samples, {:?}, filter bounds ξ {:.4} v {:.4?} {}",
                        report.values[0],
                        report.values.last().unwrap(),
                        report.values.len(),
                        report.verdict,
                        report.xi_bound,
                        report.v_bounds,
                        report.filter_violation.map_or("held".to_string(), |v| format!("violated {v:?}")),
                    ),
                },
                Err(e) => DescentRun { name, descent: false, bounded: false, detail: format!("{name}: {e}") },
            }
        })
        .collect()
}

fn radii_monotone() -> Result<(), String> {
    let levels: Vec<f64> = (0..10).map(|k| 0.6 * k as f64 / 9.0).collect();
    for (cost, a) in [(CostFunction::scalar_quadratic(1.0, 3.0).unwrap(), 0.2), (CostFunction::quartic(), 0.02)] {
        let dither = DitherConfig::scalar(a, 10.0).unwrap();
        let eq = equilibrium(&cost, &dither, &[0.0], &EquilibriumOptions::default()).unwrap();
        let spec = SearchSpec { level_quantum: None, monotone_envelope: false, ..SearchSpec::new(4.0) };
        let solver = RadiusSolver::new(&cost, &dither, &eq, &spec).map_err(|e| e.to_string())?;
        let xi: Vec<f64> = levels.iter().map(|&c| solver.radius_xi(c).unwrap()).collect();
        if xi.windows(2).any(|w| w[1] < w[0]) || xi[0] != 0.0 {
            return Err(format!("{}: r_ξ not monotone: {xi:?}", cost.name()));
        }
        let table: Vec<Vec<f64>> = levels
            .iter()
            .map(|&c| levels.iter().map(|&d| solver.radius_v(c, d, 0).unwrap()).collect())
            .collect();
        for i in 0..levels.len() {
            for j in 0..levels.len() {
                let v = table[i][j];
                if (i > 0 && v < table[i - 1][j]) || (j > 0 && v < table[i][j - 1]) || v < 0.0 {
                    return Err(format!("{}: r_v not monotone at ({}, {})", cost.name(), levels[i], levels[j]));
                }
            }
        }
        if table[0][0] != 0.0 {
            return Err(format!("{}: r_v(0, 0) = {}", cost.name(), table[0][0]));
        }
    }
    Ok(())
}

fn integrator_order() -> Outcome {
    let decay = FnSystem::new(1, "decay", |_, x: &[f64], dx: &mut [f64]| dx[0] = -x[0]);
    let err = |h: f64| (integrate_fixed(&decay, &[1.0], 0.0, 1.0, h, 1).unwrap().final_state()[0] - (-1.0f64).exp()).abs();
    let e: Vec<f64> = [0.2, 0.1, 0.05].iter().map(|&h| err(h)).collect();
    let ratios = [e[0] / e[1], e[1] / e[2]];
    outcome(
        ratios.iter().all(|r| (RK4_RATIO.0..=RK4_RATIO.1).contains(r)),
        format!("error ratios {ratios:.3?}"),
    )
}

fn timed(budget: Duration, run: impl FnOnce() -> Outcome) -> (Outcome, Duration, bool) {
    let start = Instant::now();
    let out = run();
    let elapsed = start.elapsed();
    (out, elapsed, elapsed <= budget)
}

fn main() -> ExitCode {
    let secs = Duration::from_secs_f64;
    let mut lines: Vec<(usize, String, bool, String)> = Vec::new();
    let mut record = |id: usize, title: &str, (out, elapsed, in_time): (Outcome, Duration, bool), budget: Duration| {
        let timing = format!("{:.2}s of {:.0}s", elapsed.as_secs_f64(), budget.as_secs_f64());
        let detail = if in_time { format!("{} [{timing}]", out.detail) } else { format!("{} [over budget: {timing}]", out.detail) };
        lines.push((id, title.to_string(), out.passed && in_time, detail));
    };

    record(1, "quadratic closed forms", timed(secs(5.0), quadrature_vs_closed_form), secs(5.0));
    record(2, "quadratic equilibrium", timed(secs(1.0), quadratic_equilibrium), secs(1.0));
    record(3, "jacobian and eigenvalue limits", timed(secs(5.0), jacobian_and_limits), secs(5.0));
    record(4, "small-amplitude rates", timed(secs(30.0), small_amplitude_rates), secs(30.0));
    record(5, "averaging validity", timed(secs(60.0), averaging_gap), secs(60.0));
    record(6, "quartic reference runs", timed(secs(60.0), reference_runs), secs(60.0));

    let start = Instant::now();
    let runs = descent_runs();
    let monotone = radii_monotone();
    let elapsed = start.elapsed();
    let in_time = elapsed <= secs(120.0);
    let timing = format!("[{:.2}s of 120s{}]", elapsed.as_secs_f64(), if in_time { "" } else { ", over budget" });
    let descent_ok = runs.iter().all(|r| r.descent) && monotone.is_ok() && in_time;
    let runs_detail: Vec<String> = runs.iter().map(|r| r.detail.clone()).collect();
    lines.push((
        7,
        "lyapunov descent".into(),
        descent_ok,
        format!(
            "{}; radii monotone: {} {timing}",
            runs.iter().map(|r| format!("{} {}", r.name, if r.descent { "descends" } else { "rises" })).collect::<Vec<_>>().join(", "),
            monotone.as_ref().map_or_else(|e| e.clone(), |_| "yes".into()),
        ),
    ));
    lines.push((
        8,
        "filter-error bounds".into(),
        runs.iter().all(|r| r.bounded),
        runs_detail.join(" | "),
    ));
    let mut record = |id: usize, title: &str, res: (Outcome, Duration, bool), budget: Duration| {
        let timing = format!("{:.2}s of {:.0}s", res.1.as_secs_f64(), budget.as_secs_f64());
        lines.push((id, title.into(), res.0.passed && res.2, format!("{} [{timing}]", res.0.detail)));
    };
    record(9, "rk4 order", timed(secs(1.0), integrator_order), secs(1.0));

    let mut failed = 0;
    for (id, title, passed, detail) in &lines {
        println!("criterion {id} {}: {title}: {detail}", if *passed { "PASS" } else { "FAIL" });
        failed += usize::from(!passed);
    }
    println!("{} of {} criteria passed", lines.len() - failed, lines.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
