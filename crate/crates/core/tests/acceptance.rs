//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line to
//! stderr (uncaptured) and then asserts the criterion.

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdvi::output::render_trajectory_csv;
use sdvi::sampler::BoxMuller;
use sdvi::vi::{lipschitz_bound_mprime, optimal_rho, solve_vi, verify_assumptions, ViSolverConfig};
use sdvi::*;

fn report(id: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {id}: {verdict}  {detail}\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn within(elapsed: Duration, secs: u64) -> bool {
    elapsed <= Duration::from_secs(secs)
}

fn bridge(tau: f64, k: f64, theta: f64) -> (SdviProblem, EulerConfig) {
    let params = BridgeParams {
        tau,
        k,
        theta,
        horizon: 1.0,
    };
    let cfg = EulerConfig::new(ViSolverConfig::from_constants(bridge_constants(&params).unwrap()));
    (build_bridge(&params).unwrap(), cfg)
}

fn circuit(epsilon: f64, abc: f64) -> (SdviProblem, CircuitParams) {
    let params = CircuitParams {
        epsilon,
        a: abc,
        b: abc,
        c: abc,
        ..Default::default()
    };
    (build_circuit(&params).unwrap(), params)
}

#[test]
fn criterion_01_bridge_oracle() {
    let start = Instant::now();
    let grid = make_grid(1.0, 50).unwrap();
    let mut worst = 0.0f64;
    let mut runs = 0;
    for seed in 0..10u64 {
        for tau in [0.0, 1.0, 2.0] {
            for k in [0.0, 1.0, 10.0] {
                for theta in [0.0, 1.0] {
                    let (p, cfg) = bridge(tau, k, theta);
                    let path = sample_brownian(&grid, 1, seed, 0).unwrap();
                    let sol = euler_path(&p, &path, &cfg).unwrap();
                    for (x, u) in sol.states.iter().zip(&sol.controls) {
                        worst = worst.max((u[0] - bridge_vi_oracle(x[0])).abs());
                    }
                    runs += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-8 && within(elapsed, 5);
    report(
        1,
        pass,
        &format!("{runs} runs, max |u - max(0,-3 y1)| = {worst:.3e}, {elapsed:.2?}"),
    );
    assert!(pass);
}

fn order_study(k: f64) -> (ConvergenceReport, Duration) {
    let (p, cfg) = bridge(1.0, k, 0.0);
    let start = Instant::now();
    let r = estimate_strong_order(&p, 512, 5, 200, 42, &cfg).unwrap();
    (r, start.elapsed())
}

#[test]
fn criterion_02_strong_order_half() {
    let (r, elapsed) = order_study(1.0);
    let xs = r.fitted_order_state;
    let us = r.fitted_order_control;
    let pass = xs.is_some_and(|o| (0.35..=0.70).contains(&o))
        && us.is_some_and(|o| (0.35..=0.80).contains(&o))
        && within(elapsed, 60);
    report(
        2,
        pass,
        &format!(
            "state order {xs:?} (want [0.35, 0.70]), control order {us:?} (want [0.35, 0.80]), \
             state errors {:?}, {elapsed:.2?}",
            r.errors_state
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_03_deterministic_order() {
    let (r, elapsed) = order_study(0.0);
    let xs = r.fitted_order_state;
    let pass = xs.is_some_and(|o| o >= 0.9) && within(elapsed, 30);
    report(3, pass, &format!("state order {xs:?} (want >= 0.9), {elapsed:.2?}"));
    assert!(pass);
}

#[test]
fn criterion_04_contraction_rate() {
    let (p, params) = circuit(0.1, 0.0);
    let c = circuit_constants(&params).unwrap();
    let cfg = ViSolverConfig::from_constants(c);
    assert_eq!(cfg.rho, optimal_rho(&c));
    let x = DVector::from_vec(vec![-1.0, 0.0]);
    let r = solve_vi(&p, 0.0, &x, &Scenario::new(0, 0, 0), &cfg).unwrap();
    let bound = c.contraction_factor_sq(cfg.rho).sqrt() + 0.05;
    let measured = r.contraction_estimate.unwrap_or(f64::INFINITY);
    let circuit_ok = r.converged && measured <= bound;

    let unit = SdviProblem::builder(1, 3, 1)
        .vi_map(|_, _, u, _| u - DVector::from_vec(vec![2.0, -5.0, 0.5]))
        .constraint(ConvexSet::nonneg_orthant(3).unwrap())
        .build()
        .unwrap();
    let mut one = ViSolverConfig::with_rho(1.0);
    one.constants = Some(ProblemConstants::vi_only(1.0, 1.0).unwrap());
    let s = solve_vi(&unit, 0.0, &DVector::zeros(1), &Scenario::new(0, 0, 0), &one).unwrap();
    let one_step = s.converged
        && s.iterations == 2
        && s.solution == DVector::from_vec(vec![2.0, 0.0, 0.5]);

    let pass = circuit_ok && one_step;
    report(
        4,
        pass,
        &format!(
            "measured ratio {measured:.5} <= {bound:.5} after {} iterations (converged {}), \
             one-step case {}",
            r.iterations, r.converged, one_step
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_lipschitz_dependence() {
    let params = BridgeParams::default();
    let p = build_bridge(&params).unwrap();
    let c = bridge_constants(&params).unwrap();
    let cfg = ViSolverConfig::from_constants(c);
    let bound = lipschitz_bound_mprime(&c, cfg.rho).unwrap().sqrt();
    let mut normals = BoxMuller::new(ChaCha8Rng::seed_from_u64(5));
    let mut draw = || DVector::from_fn(2, |_, _| 10.0 * normals.next_normal());
    let mut violations = 0;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (x1, x2) = (draw(), draw());
        let scen = Scenario::new(0, 0, 0);
        let u1 = solve_vi(&p, 0.0, &x1, &scen, &cfg).unwrap().solution;
        let u2 = solve_vi(&p, 0.0, &x2, &scen, &cfg).unwrap().solution;
        let du = (u1 - u2).norm();
        let dx = (x1 - x2).norm();
        worst = worst.max(du / dx);
        if du > bound * dx + 1e-8 {
            violations += 1;
        }
    }
    let pass = violations == 0;
    report(
        5,
        pass,
        &format!("{violations} violations, max ratio {worst:.4} vs sqrt(M') = {bound:.4}"),
    );
    assert!(pass);
}

#[test]
fn criterion_06_picard_matches_euler() {
    let mut worst = 0.0f64;
    let mut rounds_ok = true;
    let mut cases = 0;
    let (cp, cparams) = circuit(1.0, 1.0);
    let circuit_cfg = ViSolverConfig::from_constants(circuit_constants(&cparams).unwrap());
    let (bp, bcfg) = bridge(1.0, 1.0, 0.0);
    let problems = [(cp, circuit_cfg), (bp, bcfg.vi_config)];
    for (p, vi) in &problems {
        for n in [10, 50] {
            for seed in 0..5u64 {
                let grid = make_grid(p.horizon(), n).unwrap();
                let path = sample_brownian(&grid, p.noise_dim(), seed, 0).unwrap();
                let e = euler_path(p, &path, &EulerConfig::new(vi.clone())).unwrap();
                let pic = picard_path(p, &path, &PicardConfig::new(vi.clone())).unwrap();
                for (a, b) in e.states.iter().zip(&pic.states) {
                    worst = worst.max((a - b).amax());
                }
                for (a, b) in e.controls.iter().zip(&pic.controls) {
                    worst = worst.max((a - b).amax());
                }
                rounds_ok &= pic.picard_rounds.is_some_and(|r| r <= n);
                cases += 1;
            }
        }
    }
    let pass = worst <= 1e-12 && rounds_ok;
    report(
        6,
        pass,
        &format!("{cases} cases, max node difference {worst:.3e}, rounds within N: {rounds_ok}"),
    );
    assert!(pass);
}

#[test]
fn criterion_07_brownian_statistics() {
    let start = Instant::now();
    let n = 100_000usize;
    let h = 0.01;
    let grid = make_grid(h * n as f64, n).unwrap();
    let path = sample_brownian(&grid, 2, 2024, 0).unwrap();
    let nf = n as f64;
    let mean: Vec<f64> = (0..2)
        .map(|j| path.increments.iter().map(|d| d[j]).sum::<f64>() / nf)
        .collect();
    let cov = |a: usize, b: usize| {
        path.increments
            .iter()
            .map(|d| (d[a] - mean[a]) * (d[b] - mean[b]))
            .sum::<f64>()
            / (nf - 1.0)
    };
    let mean_ok = mean.iter().all(|m| m.abs() <= 4.0 * (h / nf).sqrt());
    let var = [cov(0, 0), cov(1, 1)];
    let var_ok = var.iter().all(|v| (v / h - 1.0).abs() <= 0.05);
    let cross = cov(0, 1);
    let cross_ok = cross.abs() <= 4.0 / nf.sqrt();
    let elapsed = start.elapsed();
    let pass = mean_ok && var_ok && cross_ok && within(elapsed, 2);
    report(
        7,
        pass,
        &format!("mean {:.2e} {:.2e}, variance {var:.5?} (h = {h}), covariance {cross:.2e}, {elapsed:.2?}", mean[0], mean[1]),
    );
    assert!(pass);
}

#[test]
fn criterion_08_circuit_monotonicity() {
    let mut detail = String::new();
    let mut pass = true;
    for eps in [1.0, 0.1, 0.001] {
        let (p, params) = circuit(eps, 1.0);
        let claimed = circuit_constants(&params).unwrap();
        let r = verify_assumptions(&p, &claimed, 500, 8).unwrap();
        let observed = r.observed.min_monotonicity.unwrap_or(f64::NAN);
        pass &= (observed - eps).abs() <= 1e-9;
        detail += &format!("eps {eps}: {observed:.12}; ");
    }

    let (p, _) = circuit(0.0, 1.0);
    let l = models::spectral_norm(&models::circuit::vi_matrix(0.0));
    let cfg = ViSolverConfig::with_rho(1.0 / (l * l));
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        solve_vi(&p, 0.0, &models::circuit::initial_state(), &Scenario::new(0, 0, 0), &cfg)
    }));
    let degenerate_ok = match outcome {
        Ok(Ok(r)) => {
            detail += &format!("eps 0: converged {} residual {:.3e}", r.converged, r.final_residual);
            r.solution.iter().all(|v| v.is_finite()) && r.final_residual.is_finite()
        }
        Ok(Err(e)) => {
            detail += &format!("eps 0: error {e}");
            !matches!(e, SdviError::NanInViMap { .. } | SdviError::NonFinite(_))
        }
        Err(_) => {
            detail += "eps 0: panicked";
            false
        }
    };
    pass &= degenerate_ok;
    report(8, pass, &detail);
    assert!(pass);
}

#[test]
fn criterion_09_deterministic_degeneration() {
    let (p, params) = circuit(1.0, 0.0);
    let cfg = EulerConfig::new(ViSolverConfig::from_constants(circuit_constants(&params).unwrap()));
    let grid = make_grid(p.horizon(), 150).unwrap();
    let csvs: Vec<String> = [1u64, 7, 42, 1234, u64::MAX]
        .iter()
        .map(|&seed| {
            let path = sample_brownian(&grid, p.noise_dim(), seed, 0).unwrap();
            render_trajectory_csv(&euler_path(&p, &path, &cfg).unwrap())
        })
        .collect();
    let identical = csvs.windows(2).all(|w| w[0].as_bytes() == w[1].as_bytes());
    let ens = run_ensemble(&p, &grid, 25, 9, &cfg, false).unwrap();
    let zero_var = ens
        .var_state
        .iter()
        .chain(&ens.var_control)
        .all(|v| v.iter().all(|x| *x == 0.0));
    let pass = identical && zero_var;
    report(
        9,
        pass,
        &format!("5 seeds byte-identical: {identical}, ensemble variance all zero: {zero_var}"),
    );
    assert!(pass);
}

#[test]
fn criterion_10_epsilon_continuity() {
    let seed = 31;
    let steps = 150;
    let solve = |eps: f64| {
        let (p, params) = circuit(eps, 1.0);
        let cfg = EulerConfig::new(ViSolverConfig::from_constants(circuit_constants(&params).unwrap()));
        let grid = make_grid(p.horizon(), steps).unwrap();
        let path = sample_brownian(&grid, p.noise_dim(), seed, 0).unwrap();
        (euler_path(&p, &path, &cfg).unwrap(), grid)
    };
    let (s1, grid) = solve(1.0);
    let (s3, _) = solve(1e-3);
    let (s4, _) = solve(1e-4);
    let near = discrete_h_norm(&grid, &s3.states, &s4.states).unwrap();
    let far = discrete_h_norm(&grid, &s1.states, &s4.states).unwrap();
    let unconverged = |s: &PathSolution| s.vi_iterations.iter().zip(&s.vi_residuals).filter(|(_, r)| **r > 1e-10).count();
    let pass = near < far;
    report(
        10,
        pass,
        &format!(
            "d(1e-3, 1e-4) = {near:.6}, d(1, 1e-4) = {far:.6}; unconverged VI nodes: \
             eps 1e-3 {}, eps 1e-4 {}",
            unconverged(&s3),
            unconverged(&s4)
        ),
    );
    assert!(pass);
}

