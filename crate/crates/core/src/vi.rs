//! Per-node variational inequality solver and assumption checks.
//!
//! The VI `find u in K: <F(t, x, u), v - u> >= 0 for all v in K` is solved by
//! the projection iteration `u_{k+1} = P_K(u_k - ρ F(t, x, u_k))`. When `F` is
//! `C`-strongly monotone and `L_F`-Lipschitz in `u`, the map is a contraction
//! with factor `sqrt(1 - 2ρC + ρ²L_F²)` for every `ρ in (0, 2C/L_F²)`, and
//! its fixed point is the unique VI solution.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Result, SdviError};
use crate::problem::{ProblemConstants, Scenario, SdviProblem};
use crate::sampler::BoxMuller;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ViSolverConfig {
    pub rho: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub warm_start: Option<DVector<f64>>,
    /// When attached, `rho` must lie in `(0, 2C/L_F²)`.
    pub constants: Option<ProblemConstants>,
    /// Keep every successive-iterate distance in the result.
    pub keep_history: bool,
}

impl ViSolverConfig {
    /// Step `ρ* = C/L_F²` with the admissibility check enabled.
    pub fn from_constants(constants: ProblemConstants) -> Self {
        Self {
            rho: optimal_rho(&constants),
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            warm_start: None,
            constants: Some(constants),
            keep_history: false,
        }
    }

    /// A user-chosen step with no constants, hence no admissibility check.
    pub fn with_rho(rho: f64) -> Self {
        Self {
            rho,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            warm_start: None,
            constants: None,
            keep_history: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(SdviError::invalid(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(SdviError::invalid(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(SdviError::invalid("max_iter must be at least 1"));
        }
        if let Some(c) = &self.constants {
            c.validate()?;
            if !c.is_admissible_rho(self.rho) {
                return Err(SdviError::invalid(format!(
                    "rho = {} outside the admissible interval (0, {})",
                    self.rho,
                    c.max_rho()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViSolveResult {
    pub solution: DVector<f64>,
    /// Number of projection steps applied, including the one whose move fell
    /// below `tol`.
    pub iterations: usize,
    /// Last successive-iterate distance `‖u_{k+1} - u_k‖`.
    pub final_residual: f64,
    /// Geometric mean of successive distance ratios, when it lies in `[0, 1)`.
    pub contraction_estimate: Option<f64>,
    pub converged: bool,
    pub history: Vec<f64>,
}

/// Solves the VI at `(t, x)` by the projected fixed-point iteration.
///
/// Starts from `config.warm_start` projected into `K`, or from `P_K(0)`.
/// Hitting `max_iter` is reported through `converged = false`; a NaN from the
/// VI map or a non-finite iterate is an error.
pub fn solve_vi(
    problem: &SdviProblem,
    t: f64,
    x: &DVector<f64>,
    scenario: &Scenario,
    config: &ViSolverConfig,
) -> Result<ViSolveResult> {
    config.validate()?;
    if x.len() != problem.state_dim() {
        return Err(SdviError::DimensionMismatch {
            context: "VI state argument",
            expected: problem.state_dim(),
            found: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SdviError::NonFinite("VI state argument"));
    }
    let k = problem.constraint();
    let mut u = match &config.warm_start {
        Some(w) => k.project(w)?,
        None => k.project(&DVector::zeros(problem.control_dim()))?,
    };

    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut prev_residual = None::<f64>;
    let mut log_ratio_sum = 0.0;
    let mut ratio_count = 0usize;
    let mut hit_zero = false;
    let mut history = Vec::new();
    let mut converged = false;

    while iterations < config.max_iter {
        let fu = problem.vi_map(t, x, &u, scenario)?;
        let mut next = &u - fu * config.rho;
        if next.iter().any(|v| v.is_nan()) {
            return Err(SdviError::NonFinite("VI iterate"));
        }
        k.project_into(next.as_mut_slice());
        residual = (&next - &u).norm();
        if !residual.is_finite() {
            return Err(SdviError::NonFinite("VI iterate"));
        }
        iterations += 1;
        if config.keep_history {
            history.push(residual);
        }
        if let Some(prev) = prev_residual {
            if prev > 0.0 {
                if residual == 0.0 {
                    hit_zero = true;
                } else {
                    log_ratio_sum += (residual / prev).ln();
                }
                ratio_count += 1;
            }
        }
        prev_residual = Some(residual);
        u = next;
        if residual <= config.tol {
            converged = true;
            break;
        }
    }

    let contraction_estimate = if ratio_count == 0 {
        None
    } else if hit_zero {
        Some(0.0)
    } else {
        Some((log_ratio_sum / ratio_count as f64).exp()).filter(|q| *q < 1.0)
    };

    Ok(ViSolveResult {
        solution: u,
        iterations,
        final_residual: residual,
        contraction_estimate,
        converged,
        history,
    })
}

/// `ρ* = C/L_F²`, the minimizer of `1 - 2ρC + ρ²L_F²`.
pub fn optimal_rho(constants: &ProblemConstants) -> f64 {
    constants.monotonicity / (constants.lip_vi_map * constants.lip_vi_map)
}

/// Contraction factor (squared) at `ρ*`: `1 - C²/L_F²`.
pub fn optimal_contraction_factor(constants: &ProblemConstants) -> f64 {
    constants.contraction_factor_sq(optimal_rho(constants))
}

/// `M' = ρ²L_F² / (1 - sqrt(1 - 2ρC + ρ²L_F²))²`, the squared Lipschitz
/// constant of the solution map `x ↦ u(x)`.
pub fn lipschitz_bound_mprime(constants: &ProblemConstants, rho: f64) -> Result<f64> {
    constants.validate()?;
    if !constants.is_admissible_rho(rho) {
        return Err(SdviError::invalid(format!(
            "rho = {rho} outside the admissible interval (0, {})",
            constants.max_rho()
        )));
    }
    let l = constants.lip_vi_map;
    let q = constants.contraction_factor_sq(rho).sqrt();
    let denom = 1.0 - q;
    Ok(rho * rho * l * l / (denom * denom))
}

/// Extremal ratios observed by [`verify_assumptions`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObservedRatios {
    pub max_lip_drift: f64,
    pub max_lip_diffusion: f64,
    pub max_lip_vi_map: f64,
    /// `None` if every sampled control pair coincided.
    pub min_monotonicity: Option<f64>,
    pub max_growth_drift: f64,
    pub max_growth_diffusion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub samples: usize,
    pub seed: u64,
    pub monotonicity_pairs: usize,
    pub claimed: ProblemConstants,
    pub observed: ObservedRatios,
    pub violations: Vec<String>,
}

impl AssumptionReport {
    pub fn is_consistent(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = &self.observed;
        let c = &self.claimed;
        writeln!(f, "samples = {}", self.samples)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "monotonicity_pairs = {}", self.monotonicity_pairs)?;
        writeln!(f, "lip_drift.claimed = {}", c.lip_drift)?;
        writeln!(f, "lip_drift.observed_max = {}", o.max_lip_drift)?;
        writeln!(f, "lip_diffusion.claimed = {}", c.lip_diffusion)?;
        writeln!(f, "lip_diffusion.observed_max = {}", o.max_lip_diffusion)?;
        writeln!(f, "lip_vi_map.claimed = {}", c.lip_vi_map)?;
        writeln!(f, "lip_vi_map.observed_max = {}", o.max_lip_vi_map)?;
        writeln!(f, "monotonicity.claimed = {}", c.monotonicity)?;
        match o.min_monotonicity {
            Some(m) => writeln!(f, "monotonicity.observed_min = {m}")?,
            None => writeln!(f, "monotonicity.observed_min = none")?,
        }
        writeln!(f, "growth_drift.claimed = {}", c.growth_drift)?;
        writeln!(f, "growth_drift.observed_max = {}", o.max_growth_drift)?;
        writeln!(f, "growth_diffusion.claimed = {}", c.growth_diffusion)?;
        writeln!(f, "growth_diffusion.observed_max = {}", o.max_growth_diffusion)?;
        writeln!(f, "violations = {}", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "violation: {v}")?;
        }
        Ok(())
    }
}

const SAMPLE_SCALE: f64 = 10.0;

fn exceeds(observed: f64, claimed: f64) -> bool {
    observed > claimed * (1.0 + 1e-9) + 1e-12
}

/// Samples random `(t, x, u)` pairs and reports the extremal Lipschitz,
/// monotonicity and growth ratios, flagging every claimed constant that an
/// observation contradicts.
///
/// Times are uniform on `[0, T]`, states are `10·Z` with `Z` standard normal,
/// and controls are `P_K(10·Z)`. Lipschitz ratios use the metric
/// `|t1 - t2| + ‖x1 - x2‖ + ‖u1 - u2‖`, the diffusion is measured in the
/// Frobenius norm, and the monotonicity ratio is taken at a common `(t, x)`.
/// A clean report does not prove the assumptions hold.
pub fn verify_assumptions(
    problem: &SdviProblem,
    claimed: &ProblemConstants,
    samples: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    if samples < 2 {
        return Err(SdviError::invalid("at least 2 samples are required"));
    }
    let (n, m) = (problem.state_dim(), problem.control_dim());
    let horizon = problem.horizon();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normals = BoxMuller::new(ChaCha8Rng::seed_from_u64(seed ^ 0x005E_ED0F_A55E));
    let mut gauss = |dim: usize| DVector::from_fn(dim, |_, _| SAMPLE_SCALE * normals.next_normal());
    let k = problem.constraint();

    let mut obs = ObservedRatios {
        max_lip_drift: 0.0,
        max_lip_diffusion: 0.0,
        max_lip_vi_map: 0.0,
        min_monotonicity: None,
        max_growth_drift: 0.0,
        max_growth_diffusion: 0.0,
    };
    let mut monotonicity_pairs = 0;

    for s in 0..samples {
        let t1 = horizon * rng.random::<f64>();
        let t2 = horizon * rng.random::<f64>();
        let x1 = gauss(n);
        let x2 = gauss(n);
        let u1 = k.project(&gauss(m))?;
        let u2 = k.project(&gauss(m))?;
        let scenario = Scenario::new(seed, 0, s);

        let f1 = problem.drift(t1, &x1, &u1)?;
        let f2 = problem.drift(t2, &x2, &u2)?;
        let g1: DMatrix<f64> = problem.diffusion(t1, &x1, &u1)?;
        let g2: DMatrix<f64> = problem.diffusion(t2, &x2, &u2)?;
        let big_f1 = problem.vi_map(t1, &x1, &u1, &scenario)?;
        let big_f2 = problem.vi_map(t2, &x2, &u2, &scenario)?;

        let du = (&u1 - &u2).norm();
        let dist = (t1 - t2).abs() + (&x1 - &x2).norm() + du;
        if dist > 0.0 {
            obs.max_lip_drift = obs.max_lip_drift.max((&f1 - &f2).norm() / dist);
            obs.max_lip_diffusion = obs.max_lip_diffusion.max((&g1 - &g2).norm() / dist);
            obs.max_lip_vi_map = obs.max_lip_vi_map.max((&big_f1 - &big_f2).norm() / dist);
        }
        let scale = 1.0 + x1.norm() + u1.norm();
        obs.max_growth_drift = obs.max_growth_drift.max(f1.norm() / scale);
        obs.max_growth_diffusion = obs.max_growth_diffusion.max(g1.norm() / scale);

        if du > 0.0 {
            let f_same = problem.vi_map(t1, &x1, &u2, &scenario)?;
            let diff = &u1 - &u2;
            let ratio = (&big_f1 - &f_same).dot(&diff) / diff.norm_squared();
            obs.min_monotonicity = Some(obs.min_monotonicity.map_or(ratio, |r| r.min(ratio)));
            monotonicity_pairs += 1;
        }
    }

    let mut violations = Vec::new();
    let checks = [
        ("lip_drift", obs.max_lip_drift, claimed.lip_drift),
        ("lip_diffusion", obs.max_lip_diffusion, claimed.lip_diffusion),
        ("lip_vi_map", obs.max_lip_vi_map, claimed.lip_vi_map),
        ("growth_drift", obs.max_growth_drift, claimed.growth_drift),
        ("growth_diffusion", obs.max_growth_diffusion, claimed.growth_diffusion),
    ];
    for (name, observed, bound) in checks {
        if exceeds(observed, bound) {
            violations.push(format!("{name}: observed {observed} > claimed {bound}"));
        }
    }
    if let Some(mono) = obs.min_monotonicity {
        if exceeds(claimed.monotonicity, mono) {
            violations.push(format!(
                "monotonicity: observed {mono} < claimed {}",
                claimed.monotonicity
            ));
        }
    }

    Ok(AssumptionReport {
        samples,
        seed,
        monotonicity_pairs,
        claimed: *claimed,
        observed: obs,
        violations,
    })
}
