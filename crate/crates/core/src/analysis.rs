//! Monte Carlo ensembles, discrete H-norms and strong-order estimation.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, SdviError};
use crate::problem::{PathSolution, SdviProblem};
use crate::sampler::{sample_brownian, TimeGrid};
use crate::stepper::{euler_path, EulerConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub num_paths: usize,
    pub grid: TimeGrid,
    pub mean_state: Vec<DVector<f64>>,
    pub var_state: Vec<DVector<f64>>,
    pub mean_control: Vec<DVector<f64>>,
    pub var_control: Vec<DVector<f64>>,
    /// Paths whose VI iteration failed to converge at one or more nodes.
    pub nonconverged_paths: Vec<u64>,
    pub per_path: Option<Vec<PathSolution>>,
}

/// Node-wise running mean and sum of squared deviations (Welford). A set of
/// identical samples keeps its mean bit-exact and its variance at zero.
struct RunningMoments {
    count: usize,
    mean: Vec<DVector<f64>>,
    m2: Vec<DVector<f64>>,
}

impl RunningMoments {
    fn new(template: &[DVector<f64>]) -> Self {
        Self {
            count: 0,
            mean: template.iter().map(|v| DVector::zeros(v.len())).collect(),
            m2: template.iter().map(|v| DVector::zeros(v.len())).collect(),
        }
    }

    fn push(&mut self, sample: &[DVector<f64>]) {
        self.count += 1;
        let k = self.count as f64;
        for ((mean, m2), x) in self.mean.iter_mut().zip(&mut self.m2).zip(sample) {
            for j in 0..x.len() {
                let delta = x[j] - mean[j];
                mean[j] += delta / k;
                m2[j] += delta * (x[j] - mean[j]);
            }
        }
    }

    /// Sample variance with the `n - 1` denominator; zero for a single path.
    fn finish(self) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let denom = self.count.saturating_sub(1).max(1) as f64;
        let var = self.m2.into_iter().map(|m| m / denom).collect();
        (self.mean, var)
    }
}

fn tag_path(path_index: usize) -> impl Fn(SdviError) -> SdviError {
    move |e| SdviError::Path {
        path_index,
        source: Box::new(e),
    }
}

/// Integrates `num_paths` independent paths (indices `0..num_paths`) and
/// aggregates node-wise means and variances in path-index order.
pub fn run_ensemble(
    problem: &SdviProblem,
    grid: &TimeGrid,
    num_paths: usize,
    seed: u64,
    config: &EulerConfig,
    keep_paths: bool,
) -> Result<EnsembleResult> {
    if num_paths == 0 {
        return Err(SdviError::invalid("num_paths must be at least 1"));
    }
    let solutions: Vec<PathSolution> = (0..num_paths)
        .into_par_iter()
        .map(|p| {
            let path = sample_brownian(grid, problem.noise_dim(), seed, p as u64)
                .map_err(tag_path(p))?;
            euler_path(problem, &path, config).map_err(tag_path(p))
        })
        .collect::<Result<_>>()?;

    let mut states = RunningMoments::new(&solutions[0].states);
    let mut controls = RunningMoments::new(&solutions[0].controls);
    let mut nonconverged_paths = Vec::new();
    for sol in &solutions {
        states.push(&sol.states);
        controls.push(&sol.controls);
        if !sol.vi_converged() {
            nonconverged_paths.push(sol.path_index);
        }
    }
    let (mean_state, var_state) = states.finish();
    let (mean_control, var_control) = controls.finish();
    Ok(EnsembleResult {
        num_paths,
        grid: grid.clone(),
        mean_state,
        var_state,
        mean_control,
        var_control,
        nonconverged_paths,
        per_path: keep_paths.then_some(solutions),
    })
}

/// Keeps every `factor`-th node of a fine trajectory.
pub fn restrict(fine: &[DVector<f64>], factor: usize) -> Result<Vec<DVector<f64>>> {
    if factor == 0 || fine.is_empty() || !(fine.len() - 1).is_multiple_of(factor) {
        return Err(SdviError::GridMismatch(format!(
            "cannot restrict {} nodes by factor {factor}",
            fine.len()
        )));
    }
    Ok(fine.iter().step_by(factor).cloned().collect())
}

/// Left-point Riemann approximation of `(∫_0^T ‖a(t) - b(t)‖² dt)^{1/2}` on a
/// grid, treating both trajectories as piecewise constant on `[t_i, t_{i+1})`.
pub fn discrete_h_norm(grid: &TimeGrid, a: &[DVector<f64>], b: &[DVector<f64>]) -> Result<f64> {
    let nodes = grid.num_steps() + 1;
    if a.len() != nodes || b.len() != nodes {
        return Err(SdviError::GridMismatch(format!(
            "trajectories of length {} and {} on a grid with {nodes} nodes",
            a.len(),
            b.len()
        )));
    }
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b).take(grid.num_steps()) {
        if x.len() != y.len() {
            return Err(SdviError::DimensionMismatch {
                context: "trajectory entries",
                expected: x.len(),
                found: y.len(),
            });
        }
        sum += (x - y).norm_squared();
    }
    Ok((grid.step() * sum).sqrt())
}

/// Monte Carlo H-norm: root of the mean of squared per-path norms.
pub fn ensemble_h_norm(per_path: &[f64]) -> f64 {
    if per_path.is_empty() {
        return 0.0;
    }
    (per_path.iter().map(|v| v * v).sum::<f64>() / per_path.len() as f64).sqrt()
}

/// Ordinary least-squares slope of `ln e` against `ln h`, using only the
/// strictly positive errors. `None` when fewer than two remain.
pub fn fit_loglog_slope(step_sizes: &[f64], errors: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = step_sizes
        .iter()
        .zip(errors)
        .filter(|(h, e)| **h > 0.0 && **e > 0.0 && e.is_finite())
        .map(|(h, e)| (h.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub fine_steps: usize,
    pub levels: usize,
    /// Coarse step sizes, strictly decreasing.
    pub step_sizes: Vec<f64>,
    pub errors_state: Vec<f64>,
    pub errors_control: Vec<f64>,
    pub fitted_order_state: Option<f64>,
    pub fitted_order_control: Option<f64>,
    pub num_paths: usize,
    pub seed: u64,
    /// Solves (over all paths and levels) whose VI iteration hit `max_iter`.
    pub vi_nonconverged_solves: usize,
}

pub const MIN_CONVERGENCE_PATHS: usize = 30;

struct PathErrors {
    state_sq: Vec<f64>,
    control_sq: Vec<f64>,
    nonconverged: usize,
}

/// Strong-order study by coupled refinement.
///
/// For each path a master Brownian path with `fine_steps` steps is sampled;
/// its Euler solution is the reference. Coarse solutions use the master path
/// coarsened by `2^j`, `j = 1..=levels`, and are compared with the reference
/// restricted to their nodes. Errors are ensemble discrete H-norms and the
/// fitted order is the log–log least-squares slope.
pub fn estimate_strong_order(
    problem: &SdviProblem,
    fine_steps: usize,
    levels: usize,
    num_paths: usize,
    seed: u64,
    config: &EulerConfig,
) -> Result<ConvergenceReport> {
    if levels < 2 {
        return Err(SdviError::invalid("at least 2 refinement levels are required"));
    }
    if levels >= usize::BITS as usize || !fine_steps.is_multiple_of(1usize << levels) || fine_steps == 0 {
        return Err(SdviError::invalid(format!(
            "fine_steps = {fine_steps} is not divisible by 2^{levels}"
        )));
    }
    if num_paths < MIN_CONVERGENCE_PATHS {
        return Err(SdviError::invalid(format!(
            "at least {MIN_CONVERGENCE_PATHS} paths are required, got {num_paths}"
        )));
    }
    let fine_grid = TimeGrid::new(problem.horizon(), fine_steps)?;

    let per_path: Vec<PathErrors> = (0..num_paths)
        .into_par_iter()
        .map(|p| {
            let run = || -> Result<PathErrors> {
                let master = sample_brownian(&fine_grid, problem.noise_dim(), seed, p as u64)?;
                let reference = euler_path(problem, &master, config)?;
                let mut nonconverged = usize::from(!reference.vi_converged());
                let mut state_sq = Vec::with_capacity(levels);
                let mut control_sq = Vec::with_capacity(levels);
                for level in (1..=levels).rev() {
                    let factor = 1usize << level;
                    let coarse = master.coarsen(factor)?;
                    let sol = euler_path(problem, &coarse, config)?;
                    nonconverged += usize::from(!sol.vi_converged());
                    let xs = restrict(&reference.states, factor)?;
                    let us = restrict(&reference.controls, factor)?;
                    state_sq.push(discrete_h_norm(&coarse.grid, &sol.states, &xs)?.powi(2));
                    control_sq.push(discrete_h_norm(&coarse.grid, &sol.controls, &us)?.powi(2));
                }
                Ok(PathErrors {
                    state_sq,
                    control_sq,
                    nonconverged,
                })
            };
            run().map_err(tag_path(p))
        })
        .collect::<Result<_>>()?;

    let mut state = vec![0.0; levels];
    let mut control = vec![0.0; levels];
    let mut vi_nonconverged_solves = 0;
    for e in &per_path {
        for j in 0..levels {
            state[j] += e.state_sq[j];
            control[j] += e.control_sq[j];
        }
        vi_nonconverged_solves += e.nonconverged;
    }
    let n = num_paths as f64;
    let errors_state: Vec<f64> = state.iter().map(|s| (s / n).sqrt()).collect();
    let errors_control: Vec<f64> = control.iter().map(|s| (s / n).sqrt()).collect();
    let step_sizes: Vec<f64> = (1..=levels)
        .rev()
        .map(|level| fine_grid.step() * (1usize << level) as f64)
        .collect();

    Ok(ConvergenceReport {
        fine_steps,
        levels,
        fitted_order_state: fit_loglog_slope(&step_sizes, &errors_state),
        fitted_order_control: fit_loglog_slope(&step_sizes, &errors_control),
        step_sizes,
        errors_state,
        errors_control,
        num_paths,
        seed,
        vi_nonconverged_solves,
    })
}
