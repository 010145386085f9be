use vaoi::qlearning::{extract_policy, QTable};
use vaoi::sim::{monte_carlo_eval, McSettings};
use vaoi::solver::{optimal_q_values, rvia_solve_kernel};
use vaoi::{
    evaluate_chain, exact_policy_evaluation, greedy_policy, rvia_solve, threshold_profile, Action, Kernel, Policy,
    RviaSettings, State, SystemParams,
};

const TOL: f64 = 1e-9;

fn grid() -> Vec<SystemParams> {
    let mut out = Vec::new();
    for &(p_g, p_s) in &[(0.3, 0.8), (0.6, 0.5), (0.9, 0.95)] {
        for &beta in &[0.05, 0.2, 0.6] {
            for &b in &[1, 4] {
                out.push(SystemParams::new(p_g, p_s, beta, b, 6).unwrap());
            }
        }
    }
    out
}

#[test]
fn reference_state_does_not_change_average_cost() {
    for p in grid() {
        let a = rvia_solve(&p, TOL, 100_000, State::new(0, 0)).unwrap();
        let b = rvia_solve(&p, TOL, 100_000, State::new(p.delta_max, p.battery_capacity)).unwrap();
        let c = rvia_solve(&p, TOL, 100_000, State::new(2, 1)).unwrap();
        assert!((a.avg_cost - b.avg_cost).abs() <= 10.0 * TOL, "{p:?}");
        assert!((a.avg_cost - c.avg_cost).abs() <= 10.0 * TOL, "{p:?}");
        assert_eq!(a.value.values()[0], 0.0);
    }
}

#[test]
fn optimal_dominates_baselines() {
    for p in grid() {
        let optimal = rvia_solve(&p, TOL, 100_000, State::new(0, 0)).unwrap();
        let opt = exact_policy_evaluation(&p, &optimal.policy).unwrap();
        let greedy = exact_policy_evaluation(&p, &greedy_policy(p.shape())).unwrap();
        let idle = exact_policy_evaluation(&p, &Policy::all_idle(p.shape())).unwrap();
        assert!(opt <= greedy + 1e-9, "{p:?}: {opt} > greedy {greedy}");
        assert!(opt <= idle + 1e-9, "{p:?}: {opt} > idle {idle}");
        assert!((opt - optimal.avg_cost).abs() <= 1e-6, "{p:?}");
        assert!(optimal.avg_cost >= 0.0 && optimal.avg_cost <= p.delta_max as f64);
        assert!(optimal.span_residual < TOL);
    }
}

#[test]
fn all_idle_absorbs_at_ceiling() {
    let p = SystemParams::default();
    let v = exact_policy_evaluation(&p, &Policy::all_idle(p.shape())).unwrap();
    assert!((v - 10.0).abs() < 1e-9);
}

#[test]
fn deterministic_world_costs_generation_probability() {
    for p_g in [0.0, 0.25, 0.7, 1.0] {
        let p = SystemParams::new(p_g, 1.0, 1.0, 3, 8).unwrap();
        let r = rvia_solve(&p, TOL, 100_000, State::new(0, 0)).unwrap();
        assert!((r.avg_cost - p_g).abs() < 1e-8, "p_g {p_g}: {}", r.avg_cost);
    }
}

#[test]
fn consistency_triangle_at_default_parameters() {
    let p = SystemParams::default();
    let kernel = Kernel::new(&p).unwrap();
    let solved = rvia_solve_kernel(&kernel, &RviaSettings::default()).unwrap();
    let exact = evaluate_chain(&kernel, &solved.policy, State::new(0, 0)).unwrap();
    assert!((solved.avg_cost - exact.average_vaoi).abs() <= 1e-6);
    assert!(!exact.reducible);
    let mc = monte_carlo_eval(
        &p,
        &solved.policy,
        &McSettings {
            runs: 200,
            seed: 1,
            ..McSettings::default()
        },
    )
    .unwrap();
    assert!(mc.covers(exact.average_vaoi), "{mc:?} vs {}", exact.average_vaoi);
}

#[test]
fn default_parameters_have_threshold_structure() {
    let solved = rvia_solve(&SystemParams::default(), TOL, 100_000, State::new(0, 0)).unwrap();
    let profile = threshold_profile(&solved.policy);
    assert!(profile.holds());
    assert_eq!(profile.violations().count(), 0);
    assert_eq!(profile.levels[0].threshold, None);
}

#[test]
fn optimal_q_table_extracts_optimal_policy() {
    for p in grid() {
        let kernel = Kernel::new(&p).unwrap();
        let solved = rvia_solve_kernel(&kernel, &RviaSettings::default()).unwrap();
        let q = optimal_q_values(&kernel, &solved);
        let mut table = QTable::new(p.shape(), State::new(0, 0)).unwrap();
        for (i, s) in p.shape().states().enumerate() {
            table.set_q(s, Action::Idle, q[i][0]);
            table.set_q(s, Action::Transmit, q[i][1]);
        }
        assert_eq!(extract_policy(&table), solved.policy, "{p:?}");
    }
}

#[test]
fn non_convergence_is_reported() {
    let err = rvia_solve(&SystemParams::default(), 1e-12, 5, State::new(0, 0)).unwrap_err();
    assert!(matches!(err, vaoi::Error::NotConverged { iterations: 5, .. }), "{err}");
    assert!(rvia_solve(&SystemParams::default(), TOL, 100, State::new(11, 0)).is_err());
}

#[test]
fn solver_is_bit_deterministic() {
    let p = SystemParams::default();
    let a = rvia_solve(&p, TOL, 100_000, State::new(0, 0)).unwrap();
    let b = rvia_solve(&p, TOL, 100_000, State::new(0, 0)).unwrap();
    assert_eq!(a.avg_cost.to_bits(), b.avg_cost.to_bits());
    assert_eq!(a.value, b.value);
    assert_eq!(a.policy.to_csv_grid(), b.policy.to_csv_grid());
}
