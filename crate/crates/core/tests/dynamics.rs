use proptest::prelude::*;

use sgfnn_core::eval::{ensemble_stats, invariant_drift, second_moment_slope};
use sgfnn_core::sim::{midpoint_step, simulate_ensemble, MidpointSolver};
use sgfnn_core::{PhaseState, SystemKind, SystemSpec};

fn linear(sigma: f64) -> SystemSpec {
    SystemSpec::with_defaults(SystemKind::LinearOscillator)
        .with_overrides([("sigma", sigma)])
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // The midpoint rule conserves quadratic invariants exactly; with additive
    // noise the energy jumps by exactly dW * (p0 + p1) / 2 * sigma.
    #[test]
    fn linear_midpoint_energy_balance(p in -3.0f64..3.0, q in -3.0f64..3.0, dw in -0.3f64..0.3, delta in 0.001f64..0.1) {
        let spec = linear(0.1);
        let x0 = PhaseState::pq(p, q);
        let x1 = midpoint_step(&spec, &x0, delta, &[dw], MidpointSolver::default()).unwrap();
        let dh = 0.5 * (x1.squared_norm() - x0.squared_norm());
        let work = 0.1 * dw * 0.5 * (x0.p()[0] + x1.p()[0]);
        prop_assert!((dh - work).abs() < 1e-11, "dh {} work {}", dh, work);
    }

    #[test]
    fn kubo_midpoint_keeps_the_radius(p in -3.0f64..3.0, q in -3.0f64..3.0, dw in -0.5f64..0.5) {
        let spec = SystemSpec::with_defaults(SystemKind::Kubo);
        let x0 = PhaseState::pq(p, q);
        let x1 = midpoint_step(&spec, &x0, 0.01, &[dw], MidpointSolver::default()).unwrap();
        prop_assert!((x1.squared_norm() - x0.squared_norm()).abs() < 1e-10);
    }
}

#[test]
fn linear_second_moment_grows_at_sigma_squared() {
    // E|x_t|^2 = |x_0|^2 + sigma^2 t for the noisy oscillator.
    let spec = linear(0.3);
    let ens = simulate_ensemble(&spec, &PhaseState::pq(0.0, 1.0), 2000, 200, 0.01, 4, MidpointSolver::default()).unwrap();
    let slope = second_moment_slope(&ensemble_stats(&ens).unwrap(), 2.0).unwrap();
    assert!((slope - 0.09).abs() < 0.015, "slope {slope}");
}

#[test]
fn ensembles_do_not_depend_on_thread_count() {
    let spec = SystemSpec::with_defaults(SystemKind::Synchrotron);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_ensemble(&spec, &PhaseState::pq(0.0, 1.0), 16, 30, 0.01, 2, MidpointSolver::default()).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn kubo_ensemble_invariant_drift_is_at_solver_tolerance() {
    let spec = SystemSpec::with_defaults(SystemKind::Kubo);
    let ens = simulate_ensemble(&spec, &PhaseState::pq(1.0, 0.0), 50, 500, 0.01, 8, MidpointSolver::default()).unwrap();
    assert!(invariant_drift(&ens, &spec).unwrap().max_drift < 1e-9);
}
