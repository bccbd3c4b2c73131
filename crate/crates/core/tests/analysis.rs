use nalgebra::DMatrix;
use sdvi::analysis::restrict;
use sdvi::vi::{lipschitz_bound_mprime, ViSolverConfig};
use sdvi::*;

fn bridge_setup(k: f64) -> (SdviProblem, EulerConfig, ProblemConstants) {
    let params = BridgeParams {
        tau: 1.0,
        k,
        theta: 0.0,
        horizon: 1.0,
    };
    let c = bridge_constants(&params).unwrap();
    (
        build_bridge(&params).unwrap(),
        EulerConfig::new(ViSolverConfig::from_constants(c)),
        c,
    )
}

#[test]
fn deterministic_problem_has_zero_variance() {
    let (p, cfg, _) = bridge_setup(0.0);
    let grid = make_grid(1.0, 50).unwrap();
    let ens = run_ensemble(&p, &grid, 40, 3, &cfg, false).unwrap();
    for v in ens.var_state.iter().chain(&ens.var_control) {
        assert!(v.iter().all(|x| *x == 0.0));
    }
    assert!(ens.nonconverged_paths.is_empty());
    assert!(ens.per_path.is_none());
}

#[test]
fn single_path_has_zero_variance() {
    let (p, cfg, _) = bridge_setup(1.0);
    let grid = make_grid(1.0, 20).unwrap();
    let ens = run_ensemble(&p, &grid, 1, 3, &cfg, true).unwrap();
    assert!(ens.var_state.iter().all(|v| v.iter().all(|x| *x == 0.0)));
    let only = &ens.per_path.as_ref().unwrap()[0];
    assert_eq!(ens.mean_state, only.states);
}

#[test]
fn brownian_motion_variance_at_horizon() {
    let horizon = 2.0;
    let p = SdviProblem::builder(2, 1, 2)
        .diffusion(|_, _, _| DMatrix::identity(2, 2))
        .horizon(horizon)
        .build()
        .unwrap();
    let cfg = EulerConfig::new(ViSolverConfig::from_constants(
        ProblemConstants::vi_only(1.0, 1.0).unwrap(),
    ));
    let grid = make_grid(horizon, 10).unwrap();
    let ens = run_ensemble(&p, &grid, 10_000, 21, &cfg, false).unwrap();
    for j in 0..2 {
        let var = ens.var_state[10][j];
        assert!((var / horizon - 1.0).abs() < 0.05, "component {j}: {var}");
    }
}

#[test]
fn ensemble_is_reproducible_and_ordered() {
    let (p, cfg, _) = bridge_setup(1.0);
    let grid = make_grid(1.0, 25).unwrap();
    let a = run_ensemble(&p, &grid, 16, 77, &cfg, true).unwrap();
    let b = run_ensemble(&p, &grid, 16, 77, &cfg, true).unwrap();
    assert_eq!(a, b);
    let idx: Vec<u64> = a.per_path.unwrap().iter().map(|s| s.path_index).collect();
    assert_eq!(idx, (0..16).collect::<Vec<_>>());
}

#[test]
fn convergence_study_preconditions() {
    let (p, cfg, _) = bridge_setup(1.0);
    assert!(estimate_strong_order(&p, 64, 1, 30, 0, &cfg).is_err());
    assert!(estimate_strong_order(&p, 60, 3, 30, 0, &cfg).is_err());
    assert!(estimate_strong_order(&p, 64, 3, 10, 0, &cfg).is_err());
}

#[test]
fn convergence_report_invariants() {
    let (p, cfg, c) = bridge_setup(1.0);
    let report = estimate_strong_order(&p, 256, 4, 60, 5, &cfg).unwrap();
    assert_eq!(report.step_sizes.len(), 4);
    assert!(report.step_sizes.windows(2).all(|w| w[0] > w[1]));
    assert!((report.step_sizes[0] - 1.0 / 16.0).abs() < 1e-15);
    assert!(report
        .errors_state
        .iter()
        .chain(&report.errors_control)
        .all(|e| e.is_finite() && *e >= 0.0));

    let inversions = report.errors_state.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(inversions <= 1, "{:?}", report.errors_state);

    let mp = lipschitz_bound_mprime(&c, cfg.vi_config.rho).unwrap();
    for (eu, ex) in report.errors_control.iter().zip(&report.errors_state) {
        assert!(*eu <= mp.sqrt() * ex + 10.0 * cfg.vi_config.tol);
    }

    let again = estimate_strong_order(&p, 256, 4, 60, 5, &cfg).unwrap();
    assert_eq!(report, again);
    assert_eq!(report.vi_nonconverged_solves, 0);
}

#[test]
fn multiplicative_noise_gives_half_order() {
    // Geometric Brownian motion: the Euler–Maruyama strong order is 1/2.
    let p = SdviProblem::builder(1, 1, 1)
        .drift(|_, x, _| x * 0.05)
        .diffusion(|_, x, _| DMatrix::from_element(1, 1, 0.8 * x[0]))
        .initial_state(nalgebra::DVector::from_element(1, 1.0))
        .build()
        .unwrap();
    let cfg = EulerConfig::new(ViSolverConfig::from_constants(
        ProblemConstants::vi_only(1.0, 1.0).unwrap(),
    ));
    let report = estimate_strong_order(&p, 1024, 5, 400, 11, &cfg).unwrap();
    let order = report.fitted_order_state.unwrap();
    assert!((0.35..=0.70).contains(&order), "{order} {:?}", report.errors_state);
}

#[test]
fn restriction_matches_coarse_nodes() {
    let (p, cfg, _) = bridge_setup(0.0);
    let fine = euler_path(&p, &sample_brownian(&make_grid(1.0, 8).unwrap(), 1, 0, 0).unwrap(), &cfg).unwrap();
    let coarse = restrict(&fine.states, 4).unwrap();
    assert_eq!(coarse.len(), 3);
    assert_eq!(coarse[1], fine.states[4]);
}
