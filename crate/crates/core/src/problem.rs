//! Problem data, structural constants and path containers.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::convex::ConvexSet;
use crate::error::{Result, SdviError};
use crate::sampler::{self, TimeGrid};

pub type DriftFn = dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;
pub type DiffusionFn = dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync;
pub type ViMapFn =
    dyn Fn(f64, &DVector<f64>, &DVector<f64>, &Scenario) -> DVector<f64> + Send + Sync;

/// Opaque handle for the sample point `ω` seen by the VI map.
///
/// Each (path, node) pair owns a dedicated ChaCha stream; calling
/// [`Scenario::rng`] twice yields the same sequence, so an `ω`-dependent map
/// stays a pure function of its arguments during the fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scenario {
    pub seed: u64,
    pub path_index: u64,
    pub node: usize,
}

impl Scenario {
    pub fn new(seed: u64, path_index: u64, node: usize) -> Self {
        Self {
            seed,
            path_index,
            node,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        sampler::path_rng(self.seed, self.path_index, sampler::scenario_stream(self.node))
    }
}

/// The SDVI
///
/// ```text
/// dx = f(t, x, u) dt + g(t, x, u) dB_t,   x(0) = x0,  t in [0, T]
/// <F(t, ω, x, u), v - u> >= 0   for all v in K
/// ```
///
/// with `x` in `R^n`, `u` in `R^m` and an `l`-dimensional Brownian motion.
#[derive(Clone)]
pub struct SdviProblem {
    state_dim: usize,
    control_dim: usize,
    noise_dim: usize,
    drift: Arc<DriftFn>,
    diffusion: Arc<DiffusionFn>,
    vi_map: Arc<ViMapFn>,
    constraint: ConvexSet,
    initial_state: DVector<f64>,
    horizon: f64,
}

impl fmt::Debug for SdviProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdviProblem")
            .field("state_dim", &self.state_dim)
            .field("control_dim", &self.control_dim)
            .field("noise_dim", &self.noise_dim)
            .field("constraint", &self.constraint)
            .field("initial_state", &self.initial_state.as_slice())
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl SdviProblem {
    /// Starts a builder with zero drift, zero diffusion, zero VI map and
    /// `K = R^m`.
    pub fn builder(state_dim: usize, control_dim: usize, noise_dim: usize) -> SdviProblemBuilder {
        SdviProblemBuilder::new(state_dim, control_dim, noise_dim)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn constraint(&self) -> &ConvexSet {
        &self.constraint
    }

    pub fn initial_state(&self) -> &DVector<f64> {
        &self.initial_state
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn drift(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let out = (self.drift)(t, x, u);
        if out.len() != self.state_dim {
            return Err(SdviError::DimensionMismatch {
                context: "drift output",
                expected: self.state_dim,
                found: out.len(),
            });
        }
        Ok(out)
    }

    pub fn diffusion(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let out = (self.diffusion)(t, x, u);
        if out.nrows() != self.state_dim {
            return Err(SdviError::DimensionMismatch {
                context: "diffusion rows",
                expected: self.state_dim,
                found: out.nrows(),
            });
        }
        if out.ncols() != self.noise_dim {
            return Err(SdviError::DimensionMismatch {
                context: "diffusion columns",
                expected: self.noise_dim,
                found: out.ncols(),
            });
        }
        Ok(out)
    }

    pub fn vi_map(
        &self,
        t: f64,
        x: &DVector<f64>,
        u: &DVector<f64>,
        scenario: &Scenario,
    ) -> Result<DVector<f64>> {
        let out = (self.vi_map)(t, x, u, scenario);
        if out.len() != self.control_dim {
            return Err(SdviError::DimensionMismatch {
                context: "VI map output",
                expected: self.control_dim,
                found: out.len(),
            });
        }
        if out.iter().any(|v| v.is_nan()) {
            return Err(SdviError::NanInViMap { t });
        }
        Ok(out)
    }
}

pub struct SdviProblemBuilder {
    state_dim: usize,
    control_dim: usize,
    noise_dim: usize,
    drift: Option<Arc<DriftFn>>,
    diffusion: Option<Arc<DiffusionFn>>,
    vi_map: Option<Arc<ViMapFn>>,
    constraint: Option<ConvexSet>,
    initial_state: Option<DVector<f64>>,
    horizon: f64,
}

impl SdviProblemBuilder {
    fn new(state_dim: usize, control_dim: usize, noise_dim: usize) -> Self {
        Self {
            state_dim,
            control_dim,
            noise_dim,
            drift: None,
            diffusion: None,
            vi_map: None,
            constraint: None,
            initial_state: None,
            horizon: 1.0,
        }
    }

    pub fn drift<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.drift = Some(Arc::new(f));
        self
    }

    pub fn diffusion<G>(mut self, g: G) -> Self
    where
        G: Fn(f64, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.diffusion = Some(Arc::new(g));
        self
    }

    pub fn vi_map<F>(mut self, map: F) -> Self
    where
        F: Fn(f64, &DVector<f64>, &DVector<f64>, &Scenario) -> DVector<f64> + Send + Sync + 'static,
    {
        self.vi_map = Some(Arc::new(map));
        self
    }

    pub fn constraint(mut self, set: ConvexSet) -> Self {
        self.constraint = Some(set);
        self
    }

    pub fn initial_state(mut self, x0: DVector<f64>) -> Self {
        self.initial_state = Some(x0);
        self
    }

    pub fn horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    /// Validates dimensions and probes each map once at `(0, x0, P_K(0))`.
    pub fn build(self) -> Result<SdviProblem> {
        let (n, m, l) = (self.state_dim, self.control_dim, self.noise_dim);
        if n == 0 || m == 0 || l == 0 {
            return Err(SdviError::invalid("state, control and noise dimensions must be positive"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(SdviError::invalid(format!("horizon must be positive, got {}", self.horizon)));
        }
        let constraint = match self.constraint {
            Some(k) => k,
            None => ConvexSet::whole_space(m)?,
        };
        if constraint.dim() != m {
            return Err(SdviError::DimensionMismatch {
                context: "constraint set",
                expected: m,
                found: constraint.dim(),
            });
        }
        let initial_state = self.initial_state.unwrap_or_else(|| DVector::zeros(n));
        if initial_state.len() != n {
            return Err(SdviError::DimensionMismatch {
                context: "initial state",
                expected: n,
                found: initial_state.len(),
            });
        }
        if initial_state.iter().any(|v| !v.is_finite()) {
            return Err(SdviError::NonFinite("initial state"));
        }
        let problem = SdviProblem {
            state_dim: n,
            control_dim: m,
            noise_dim: l,
            drift: self
                .drift
                .unwrap_or_else(|| Arc::new(move |_, _, _| DVector::zeros(n))),
            diffusion: self
                .diffusion
                .unwrap_or_else(|| Arc::new(move |_, _, _| DMatrix::zeros(n, l))),
            vi_map: self
                .vi_map
                .unwrap_or_else(|| Arc::new(move |_, _, _, _| DVector::zeros(m))),
            constraint,
            initial_state,
            horizon: self.horizon,
        };
        let u = problem.constraint.project(&DVector::zeros(m))?;
        let x = problem.initial_state.clone();
        problem.drift(0.0, &x, &u)?;
        problem.diffusion(0.0, &x, &u)?;
        problem.vi_map(0.0, &x, &u, &Scenario::new(0, 0, 0))?;
        Ok(problem)
    }
}

/// Structural constants of the problem: Lipschitz moduli of `f`, `g`, `F`,
/// the strong monotonicity modulus of `F` in `u`, and the linear growth
/// constants of `f` and `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub lip_drift: f64,
    pub lip_diffusion: f64,
    pub lip_vi_map: f64,
    pub monotonicity: f64,
    pub growth_drift: f64,
    pub growth_diffusion: f64,
}

impl ProblemConstants {
    pub fn new(
        lip_drift: f64,
        lip_diffusion: f64,
        lip_vi_map: f64,
        monotonicity: f64,
        growth_drift: f64,
        growth_diffusion: f64,
    ) -> Result<Self> {
        let c = Self {
            lip_drift,
            lip_diffusion,
            lip_vi_map,
            monotonicity,
            growth_drift,
            growth_diffusion,
        };
        c.validate()?;
        Ok(c)
    }

    /// Only the VI-relevant pair `(C, L_F)`; the other moduli are set to 0.
    pub fn vi_only(monotonicity: f64, lip_vi_map: f64) -> Result<Self> {
        Self::new(0.0, 0.0, lip_vi_map, monotonicity, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lip_drift,
            self.lip_diffusion,
            self.lip_vi_map,
            self.monotonicity,
            self.growth_drift,
            self.growth_diffusion,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SdviError::invalid("problem constants must be finite and nonnegative"));
        }
        if self.lip_vi_map <= 0.0 || self.monotonicity <= 0.0 {
            return Err(SdviError::invalid(
                "VI Lipschitz modulus and monotonicity modulus must be positive",
            ));
        }
        // Strong monotonicity and Lipschitz continuity force C <= L_F.
        if self.monotonicity > self.lip_vi_map {
            return Err(SdviError::invalid(format!(
                "monotonicity modulus {} exceeds VI Lipschitz modulus {}",
                self.monotonicity, self.lip_vi_map
            )));
        }
        Ok(())
    }

    /// Upper end of the admissible step interval `(0, 2C/L_F^2)`.
    pub fn max_rho(&self) -> f64 {
        2.0 * self.monotonicity / (self.lip_vi_map * self.lip_vi_map)
    }

    pub fn is_admissible_rho(&self, rho: f64) -> bool {
        rho > 0.0 && rho < self.max_rho()
    }

    /// Squared contraction factor `1 - 2ρC + ρ²L_F²` of the projection map.
    pub fn contraction_factor_sq(&self, rho: f64) -> f64 {
        let l = self.lip_vi_map;
        (1.0 - 2.0 * rho * self.monotonicity + rho * rho * l * l).max(0.0)
    }
}

/// One point of the continuous interpolant recorded between grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolantPoint {
    pub interval: usize,
    pub substep: usize,
    pub t: f64,
    pub state: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Diagnostic {
    /// The fixed-point iteration hit `max_iter` at this node.
    ViNotConverged { node: usize, t: f64, residual: f64 },
    /// No structural constants were attached, so `rho` was not checked.
    UncheckedStep { rho: f64 },
    /// The Picard loop hit `max_outer` before settling.
    PicardNotConverged { rounds: usize, change: f64 },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::ViNotConverged { node, t, residual } => write!(
                f,
                "warning: VI iteration did not converge at node {node} (t = {t}), residual {residual}"
            ),
            Diagnostic::UncheckedStep { rho } => write!(
                f,
                "warning: step rho = {rho} used without problem constants; admissibility not checked"
            ),
            Diagnostic::PicardNotConverged { rounds, change } => write!(
                f,
                "warning: Picard iteration stopped after {rounds} rounds with change {change}"
            ),
        }
    }
}

/// Discrete trajectories `x_h(t_i)`, `u_h(t_i)` of one sample path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSolution {
    pub grid: TimeGrid,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub vi_iterations: Vec<usize>,
    pub vi_residuals: Vec<f64>,
    pub seed: u64,
    pub path_index: u64,
    pub diagnostics: Vec<Diagnostic>,
    pub interpolant: Option<Vec<InterpolantPoint>>,
    /// Outer rounds used; `None` for a plain Euler sweep.
    pub picard_rounds: Option<usize>,
}

impl PathSolution {
    pub fn num_nodes(&self) -> usize {
        self.states.len()
    }

    pub fn vi_converged(&self) -> bool {
        !self
            .diagnostics
            .iter()
            .any(|d| matches!(d, Diagnostic::ViNotConverged { .. }))
    }
}
