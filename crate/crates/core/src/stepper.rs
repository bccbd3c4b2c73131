//! Path integration: the explicit Euler scheme and the discrete Picard
//! iteration on a frozen Brownian path.
//!
//! At each node the VI is solved first, then the state is advanced:
//!
//! ```text
//! u_i     = SOL(K, F(t_i, ω, x_i, ·))
//! x_{i+1} = x_i + f(t_i, x_i, u_i) h + g(t_i, x_i, u_i) ΔB_i
//! ```
//!
//! Controls are piecewise constant on `[t_i, t_{i+1})`.

use nalgebra::DVector;

use crate::error::{Result, SdviError};
use crate::problem::{Diagnostic, InterpolantPoint, PathSolution, Scenario, SdviProblem};
use crate::sampler::BrownianPath;
use crate::vi::{solve_vi, ViSolveResult, ViSolverConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct EulerConfig {
    pub vi_config: ViSolverConfig,
    pub record_interpolant: bool,
    pub interpolant_substeps: usize,
}

impl EulerConfig {
    pub fn new(vi_config: ViSolverConfig) -> Self {
        Self {
            vi_config,
            record_interpolant: false,
            interpolant_substeps: 1,
        }
    }

    pub fn with_interpolant(mut self, substeps: usize) -> Self {
        self.record_interpolant = true;
        self.interpolant_substeps = substeps;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardConfig {
    pub vi_config: ViSolverConfig,
    pub outer_tol: f64,
    /// Defaults to `2·N` when unset.
    pub max_outer: Option<usize>,
}

impl PicardConfig {
    pub fn new(vi_config: ViSolverConfig) -> Self {
        Self {
            vi_config,
            outer_tol: 1e-12,
            max_outer: None,
        }
    }
}

fn check_compatible(problem: &SdviProblem, path: &BrownianPath) -> Result<()> {
    if path.noise_dim != problem.noise_dim() {
        return Err(SdviError::DimensionMismatch {
            context: "Brownian path noise dimension",
            expected: problem.noise_dim(),
            found: path.noise_dim,
        });
    }
    let (a, b) = (path.grid.horizon(), problem.horizon());
    if (a - b).abs() > 1e-12 * a.max(b) {
        return Err(SdviError::GridMismatch(format!(
            "path horizon {a} differs from problem horizon {b}"
        )));
    }
    Ok(())
}

fn initial_diagnostics(config: &ViSolverConfig) -> Vec<Diagnostic> {
    if config.constants.is_none() {
        vec![Diagnostic::UncheckedStep { rho: config.rho }]
    } else {
        Vec::new()
    }
}

/// `x + f·dt + g·dB`, evaluated in that order.
fn advance(
    problem: &SdviProblem,
    t: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
    db: &DVector<f64>,
) -> Result<DVector<f64>> {
    let drift = problem.drift(t, x, u)?;
    let diffusion = problem.diffusion(t, x, u)?;
    Ok(x + drift * dt + diffusion * db)
}

fn ensure_finite(x: &DVector<f64>, node: usize, t: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SdviError::NonFiniteState { node, t })
    }
}

struct NodeRecord {
    controls: Vec<DVector<f64>>,
    iterations: Vec<usize>,
    residuals: Vec<f64>,
    diagnostics: Vec<Diagnostic>,
}

impl NodeRecord {
    fn with_capacity(n: usize) -> Self {
        Self {
            controls: Vec::with_capacity(n),
            iterations: Vec::with_capacity(n),
            residuals: Vec::with_capacity(n),
            diagnostics: Vec::new(),
        }
    }

    fn push(&mut self, node: usize, t: f64, r: ViSolveResult) {
        if !r.converged {
            self.diagnostics.push(Diagnostic::ViNotConverged {
                node,
                t,
                residual: r.final_residual,
            });
        }
        self.iterations.push(r.iterations);
        self.residuals.push(r.final_residual);
        self.controls.push(r.solution);
    }
}

/// Node VI solve with the previous node's control as warm start.
fn solve_node(
    problem: &SdviProblem,
    path: &BrownianPath,
    base: &ViSolverConfig,
    node: usize,
    x: &DVector<f64>,
    warm: Option<&DVector<f64>>,
) -> Result<ViSolveResult> {
    let mut cfg = base.clone();
    if let Some(w) = warm {
        cfg.warm_start = Some(w.clone());
    }
    let scenario = Scenario::new(path.seed, path.path_index, node);
    solve_vi(problem, path.grid.node(node), x, &scenario, &cfg)
}

/// Integrates one path by the Euler scheme.
///
/// The VI is solved at every node including `t_0` and `t_N`; a user-supplied
/// `vi_config.warm_start` only seeds the solve at `t_0`.
pub fn euler_path(
    problem: &SdviProblem,
    path: &BrownianPath,
    config: &EulerConfig,
) -> Result<PathSolution> {
    check_compatible(problem, path)?;
    config.vi_config.validate()?;
    if config.interpolant_substeps == 0 {
        return Err(SdviError::invalid("interpolant_substeps must be at least 1"));
    }
    let grid = &path.grid;
    let n = grid.num_steps();
    let h = grid.step();

    let mut states = Vec::with_capacity(n + 1);
    let mut record = NodeRecord::with_capacity(n + 1);
    record.diagnostics = initial_diagnostics(&config.vi_config);
    let mut interpolant = config.record_interpolant.then(Vec::new);

    let mut x = problem.initial_state().clone();
    for i in 0..=n {
        let t = grid.node(i);
        let warm = record.controls.last();
        let r = solve_node(problem, path, &config.vi_config, i, &x, warm)?;
        record.push(i, t, r);
        if i == n {
            states.push(x);
            break;
        }
        let u = &record.controls[i];
        let db = &path.increments[i];
        let next = if let Some(points) = interpolant.as_mut() {
            let drift = problem.drift(t, &x, u)?;
            let diffusion = problem.diffusion(t, &x, u)?;
            let s = config.interpolant_substeps;
            for j in 1..=s {
                let frac = j as f64 / s as f64;
                let state = &x + &drift * (frac * h) + &diffusion * (db * frac.sqrt());
                points.push(InterpolantPoint {
                    interval: i,
                    substep: j,
                    t: t + frac * h,
                    state,
                });
            }
            &x + drift * h + diffusion * db
        } else {
            advance(problem, t, &x, u, h, db)?
        };
        ensure_finite(&next, i + 1, grid.node(i + 1))?;
        states.push(std::mem::replace(&mut x, next));
    }

    Ok(PathSolution {
        grid: grid.clone(),
        states,
        controls: record.controls,
        vi_iterations: record.iterations,
        vi_residuals: record.residuals,
        seed: path.seed,
        path_index: path.path_index,
        diagnostics: record.diagnostics,
        interpolant,
        picard_rounds: None,
    })
}

/// Continuous Euler interpolant at time `t`:
/// `x_i + f(t_i, x_i, u_i)(t - t_i) + g(t_i, x_i, u_i)(B_t - B_{t_i})`.
///
/// Off-grid Brownian values are only defined at the recorded substeps, where
/// `B_t - B_{t_i} = sqrt((t - t_i)/h)·ΔB_i`. Grid nodes return the stored state.
pub fn interpolate_state(
    sol: &PathSolution,
    problem: &SdviProblem,
    path: &BrownianPath,
    t: f64,
) -> Result<DVector<f64>> {
    let grid = &sol.grid;
    if !path.grid.same_as(grid) {
        return Err(SdviError::GridMismatch("path and solution grids differ".into()));
    }
    let horizon = grid.horizon();
    let tol = 1e-12 * horizon.max(1.0);
    if !t.is_finite() || t < -tol || t > horizon + tol {
        return Err(SdviError::Interpolation {
            t,
            reason: "outside [0, T]",
        });
    }
    if let Some(i) = grid.node_index(t) {
        return Ok(sol.states[i].clone());
    }
    let points = sol.interpolant.as_ref().ok_or(SdviError::Interpolation {
        t,
        reason: "off-grid time but no interpolant was recorded",
    })?;
    let point = points
        .iter()
        .find(|p| (p.t - t).abs() <= tol)
        .ok_or(SdviError::Interpolation {
            t,
            reason: "not a recorded substep time",
        })?;
    let i = point.interval;
    let ti = grid.node(i);
    let (x, u) = (&sol.states[i], &sol.controls[i]);
    let drift = problem.drift(ti, x, u)?;
    let diffusion = problem.diffusion(ti, x, u)?;
    let frac = (t - ti) / grid.step();
    Ok(x + drift * (t - ti) + diffusion * (&path.increments[i] * frac.sqrt()))
}

/// Whole-path Picard iteration with frozen noise.
///
/// Round `n` solves the VI at every node against `x^(n)` and rebuilds
/// `x^(n+1)(t_i) = x_0 + Σ_{k<i} f(t_k, x^(n)_k, u^(n)_k) h + g(..) ΔB_k`,
/// starting from `x^(1) ≡ x_0`. Node `i` depends only on earlier nodes, so
/// `x^(n+1)` agrees with the Euler recursion on nodes `0..=n`; the loop stops
/// once the max node-wise change is below `outer_tol` or after `N` rounds.
pub fn picard_path(
    problem: &SdviProblem,
    path: &BrownianPath,
    config: &PicardConfig,
) -> Result<PathSolution> {
    check_compatible(problem, path)?;
    config.vi_config.validate()?;
    if config.outer_tol.is_nan() || config.outer_tol < 0.0 {
        return Err(SdviError::invalid("outer_tol must be nonnegative"));
    }
    let grid = &path.grid;
    let n = grid.num_steps();
    let h = grid.step();
    let max_outer = config.max_outer.unwrap_or(2 * n);
    if max_outer == 0 {
        return Err(SdviError::invalid("max_outer must be at least 1"));
    }

    let x0 = problem.initial_state().clone();
    let mut states = vec![x0.clone(); n + 1];
    let mut rounds = 0;
    let mut change = f64::INFINITY;
    let mut settled = false;

    while rounds < max_outer {
        rounds += 1;
        let mut next = Vec::with_capacity(n + 1);
        next.push(x0.clone());
        let mut warm: Option<DVector<f64>> = None;
        for i in 0..n {
            let r = solve_node(problem, path, &config.vi_config, i, &states[i], warm.as_ref())?;
            let t = grid.node(i);
            // Coefficients from the previous iterate, accumulated on the new
            // iterate's prefix sum.
            let drift = problem.drift(t, &states[i], &r.solution)?;
            let diffusion = problem.diffusion(t, &states[i], &r.solution)?;
            let x = &next[i] + drift * h + diffusion * &path.increments[i];
            ensure_finite(&x, i + 1, grid.node(i + 1))?;
            next.push(x);
            warm = Some(r.solution);
        }
        change = states
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        states = next;
        if change <= config.outer_tol || rounds >= n {
            settled = true;
            break;
        }
    }

    let mut record = NodeRecord::with_capacity(n + 1);
    record.diagnostics = initial_diagnostics(&config.vi_config);
    for (i, x) in states.iter().enumerate() {
        let warm = record.controls.last();
        let r = solve_node(problem, path, &config.vi_config, i, x, warm)?;
        record.push(i, grid.node(i), r);
    }
    if !settled {
        record.diagnostics.push(Diagnostic::PicardNotConverged { rounds, change });
    }

    Ok(PathSolution {
        grid: grid.clone(),
        states,
        controls: record.controls,
        vi_iterations: record.iterations,
        vi_residuals: record.residuals,
        seed: path.seed,
        path_index: path.path_index,
        diagnostics: record.diagnostics,
        interpolant: None,
        picard_rounds: Some(rounds),
    })
}
