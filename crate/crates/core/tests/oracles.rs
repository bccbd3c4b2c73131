//! Solver outputs checked against independently computed references.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use sdvi::models::circuit;
use sdvi::vi::{lipschitz_bound_mprime, optimal_rho, solve_vi, verify_assumptions, ViSolverConfig};
use sdvi::{
    build_circuit, circuit_constants, CircuitParams, ProblemConstants, Scenario,
};

/// Solves the affine VI `<M u + q, v - u> >= 0` over the box `[lo, hi]` by
/// enumerating every face: each coordinate is pinned at its lower bound,
/// pinned at its upper bound, or free with `(M u + q)_j = 0`. Returns all
/// patterns whose candidate satisfies the sign conditions.
fn active_set_oracle(m: &DMatrix<f64>, q: &DVector<f64>, lo: &[f64], hi: &[f64]) -> Vec<DVector<f64>> {
    let dim = q.len();
    let mut found = Vec::new();
    let patterns = 3usize.pow(dim as u32);
    for code in 0..patterns {
        let mut state = vec![0u8; dim];
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let mut u = DVector::zeros(dim);
        let free: Vec<usize> = (0..dim).filter(|&j| state[j] == 1).collect();
        for j in 0..dim {
            match state[j] {
                0 => u[j] = lo[j],
                2 => u[j] = hi[j],
                _ => {}
            }
        }
        if !free.is_empty() {
            let k = free.len();
            let mut a = DMatrix::zeros(k, k);
            let mut rhs = DVector::zeros(k);
            for (r, &i) in free.iter().enumerate() {
                let mut b = -q[i];
                for j in 0..dim {
                    if state[j] != 1 {
                        b -= m[(i, j)] * u[j];
                    }
                }
                rhs[r] = b;
                for (cidx, &j) in free.iter().enumerate() {
                    a[(r, cidx)] = m[(i, j)];
                }
            }
            let Some(sol) = a.lu().solve(&rhs) else { continue };
            for (r, &i) in free.iter().enumerate() {
                u[i] = sol[r];
            }
        }
        let f = m * &u + q;
        let tol = 1e-12;
        let ok = (0..dim).all(|j| match state[j] {
            0 => f[j] >= -tol,
            2 => f[j] <= tol,
            _ => u[j] >= lo[j] - tol && u[j] <= hi[j] + tol,
        });
        if ok {
            found.push(u);
        }
    }
    found
}

#[test]
fn circuit_vi_matches_active_set_enumeration() {
    let eps = 0.1;
    let params = CircuitParams {
        epsilon: eps,
        ..Default::default()
    };
    let problem = build_circuit(&params).unwrap();
    let x0 = circuit::initial_state();
    let q = circuit::q_matrix() * &x0;
    let m = circuit::m_matrix(eps);
    let lo = [-10.0, -10.0, 0.0, 0.0];
    let hi = [10.0, 10.0, 20.0, 20.0];
    let oracle = active_set_oracle(&m, &q, &lo, &hi);
    assert!(!oracle.is_empty());
    // Faces can share a point (degenerate complementarity); all must agree.
    for w in oracle.windows(2) {
        assert!((&w[0] - &w[1]).amax() < 1e-12);
    }

    let cfg = ViSolverConfig::from_constants(circuit_constants(&params).unwrap());
    let r = solve_vi(&problem, 0.0, &x0, &Scenario::new(0, 0, 0), &cfg).unwrap();
    assert!(r.converged);
    assert!(
        (&r.solution - &oracle[0]).amax() < 1e-8,
        "solver {:?} vs oracle {:?}",
        r.solution.as_slice(),
        oracle[0].as_slice()
    );
}

#[test]
fn circuit_vi_matches_oracle_at_other_states() {
    let eps = 1.0;
    let params = CircuitParams {
        epsilon: eps,
        ..Default::default()
    };
    let problem = build_circuit(&params).unwrap();
    let cfg = ViSolverConfig::from_constants(circuit_constants(&params).unwrap());
    let m = circuit::m_matrix(eps);
    for x in [[0.5, -2.0], [3.0, 4.0], [-25.0, 1.0], [0.0, 0.0]] {
        let x = DVector::from_column_slice(&x);
        let q = circuit::q_matrix() * &x;
        let oracle = active_set_oracle(&m, &q, &[-10.0, -10.0, 0.0, 0.0], &[10.0, 10.0, 20.0, 20.0]);
        let r = solve_vi(&problem, 0.0, &x, &Scenario::new(0, 0, 0), &cfg).unwrap();
        assert!(r.converged);
        assert!((&r.solution - &oracle[0]).amax() < 1e-8);
    }
}

// Reference values evaluated with 40-digit arithmetic (mpmath).
#[test]
fn mprime_matches_high_precision_values() {
    let c = ProblemConstants::vi_only(1.0, 2.0).unwrap();
    let got = lipschitz_bound_mprime(&c, 0.25).unwrap();
    assert!((got - 13.928203230275509).abs() < 1e-12, "{got}");

    let c = ProblemConstants::vi_only(1.0, 10f64.sqrt()).unwrap();
    let got = lipschitz_bound_mprime(&c, optimal_rho(&c)).unwrap();
    assert!((got - 37.97366596101028).abs() < 1e-10, "{got}");
}

#[test]
fn mprime_small_rho_limit() {
    // sqrt(1 - 2ρC + ρ²L²) = 1 - ρC + O(ρ²), so M' → (L_F / C)² as ρ → 0.
    let c = ProblemConstants::vi_only(1.0, 1.0).unwrap();
    let got = lipschitz_bound_mprime(&c, 1e-6).unwrap();
    assert!((got - 1.0).abs() < 1e-8, "{got}");
    let c = ProblemConstants::vi_only(0.5, 1.0).unwrap();
    let got = lipschitz_bound_mprime(&c, 1e-6).unwrap();
    assert!((got / 4.0 - 1.0).abs() < 1e-4, "{got}");
}

#[test]
fn circuit_monotonicity_equals_smallest_symmetric_eigenvalue() {
    for eps in [1.0, 0.1, 0.001] {
        let m = circuit::m_matrix(eps);
        let sym = (&m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let lambda_min = eig.eigenvalues.min();
        assert!((lambda_min - eps).abs() < 1e-12);

        let params = CircuitParams {
            epsilon: eps,
            a: 1.0,
            b: 1.0,
            c: 1.0,
            ..Default::default()
        };
        let problem = build_circuit(&params).unwrap();
        let claimed = circuit_constants(&params).unwrap();
        let report = verify_assumptions(&problem, &claimed, 1000, 17).unwrap();
        let observed = report.observed.min_monotonicity.unwrap();
        assert!((observed - lambda_min).abs() < 1e-9, "eps {eps}: {observed}");
        assert!(report.is_consistent(), "{report}");
    }
}
