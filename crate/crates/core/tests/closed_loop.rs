use approx::assert_abs_diff_eq;
use esc_core::averaging::{AverageSystem, EquilibriumOptions};
use esc_core::cost::parse_cost;
use esc_core::dynamics::RmspescSystem;
use esc_core::{equilibrium, integrate_fixed, Averager, CostFunction, DitherConfig, EscParams, Trajectory};

fn fig1_gains() -> EscParams {
    EscParams::new(1.0, 0.05, vec![0.25], 1.0).unwrap()
}

fn run_full(cost: &CostFunction, dither: &DitherConfig, params: &EscParams, x0: &[f64], t1: f64) -> Trajectory {
    let system = RmspescSystem { cost, dither, params };
    integrate_fixed(&system, x0, 0.0, t1, dither.max_step(), 1).unwrap()
}

/// Mean of component `i` over the final `window` of time.
fn tail_mean(traj: &Trajectory, i: usize, window: f64) -> f64 {
    let t_end = *traj.times.last().unwrap();
    let tail: Vec<f64> = traj.times.iter().zip(&traj.states).filter(|(t, _)| **t > t_end - window).map(|(_, x)| x[i]).collect();
    tail.iter().sum::<f64>() / tail.len() as f64
}

#[test]
fn expression_and_builtin_costs_give_the_same_loop() {
    let dither = DitherConfig::scalar(0.2, 10.0).unwrap();
    let params = fig1_gains();
    let builtin = CostFunction::scalar_quadratic(1.0, 3.0).unwrap();
    let parsed = parse_cost("3 + 0.5 * theta1^2", 1).unwrap();
    let a = run_full(&builtin, &dither, &params, &[2.0, 0.81, 0.0], 20.0);
    let b = run_full(&parsed, &dither, &params, &[2.0, 0.81, 0.0], 20.0);
    for (x, y) in a.states.iter().zip(&b.states) {
        for (p, q) in x.iter().zip(y) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-9);
        }
    }
}

#[test]
fn full_loop_settles_around_the_averaged_equilibrium() {
    let cost = CostFunction::scalar_quadratic(1.0, 3.0).unwrap();
    let dither = DitherConfig::scalar(0.2, 10.0).unwrap();
    let eq = equilibrium(&cost, &dither, &[1.0], &EquilibriumOptions::default()).unwrap();
    let traj = run_full(&cost, &dither, &fig1_gains(), &[2.0, 0.81, 0.0], 150.0);
    // mean over ten dither periods washes out the ripple
    let window = 10.0 * dither.period();
    assert_abs_diff_eq!(tail_mean(&traj, 0, window), eq.theta_star[0], epsilon = 0.02);
    assert_abs_diff_eq!(tail_mean(&traj, 2, window), eq.xi_star, epsilon = 0.02);
    assert!((tail_mean(&traj, 1, window) - eq.v_star[0]).abs() < 0.5 * eq.v_star[0]);
}

#[test]
fn faster_dither_tightens_the_averaging_gap() {
    let cost = CostFunction::quartic();
    let params = fig1_gains();
    let gaps = |omega: f64| {
        let dither = DitherConfig::scalar(0.02, omega).unwrap();
        let full = run_full(&cost, &dither, &params, &[2.0, 0.81, 0.0], 20.0);
        let system = AverageSystem::new(Averager::with_default_nodes(&cost, &dither).unwrap(), &params).unwrap();
        let avg = integrate_fixed(&system, &[2.0, 0.81, 0.0], 0.0, 20.0, dither.max_step(), 1).unwrap();
        let sup = full.states.iter().zip(&avg.states).map(|(x, y)| (x[0] - y[0]).abs()).fold(0.0, f64::max);
        (sup, (full.final_state()[0] - avg.final_state()[0]).abs())
    };
    let (sup_slow, end_slow) = gaps(20.0);
    let (sup_fast, end_fast) = gaps(160.0);
    assert!(sup_fast < 0.5 * sup_slow, "sup gap {sup_slow} -> {sup_fast}");
    assert!(end_fast < 0.5 * end_slow, "final gap {end_slow} -> {end_fast}");
}
