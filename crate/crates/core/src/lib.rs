//! Euler time stepping for stochastic differential variational inequalities
//!
//! ```text
//! dx = f(t, x, u) dt + g(t, x, u) dB_t,   x(0) = x0
//! <F(t, ω, x, u), v - u> >= 0   for all v in K
//! ```
//!
//! The per-node VI is solved by a projected fixed-point contraction, the state
//! is advanced by Euler–Maruyama, and [`analysis`] estimates strong orders by
//! coupled refinement of one Brownian path.

pub mod analysis;
pub mod convex;
pub mod error;
pub mod models;
pub mod output;
pub mod problem;
pub mod sampler;
pub mod stepper;
pub mod vi;

pub use analysis::{
    discrete_h_norm, estimate_strong_order, run_ensemble, ConvergenceReport, EnsembleResult,
};
pub use convex::{distance_to_set, project, ConvexSet};
pub use error::{Result, SdviError};
pub use models::{
    bridge_constants, bridge_vi_oracle, build_bridge, build_circuit, circuit_constants,
    BridgeParams, CircuitParams,
};
pub use problem::{Diagnostic, PathSolution, ProblemConstants, Scenario, SdviProblem};
pub use sampler::{coarsen, make_grid, sample_brownian, BrownianPath, TimeGrid};
pub use stepper::{euler_path, interpolate_state, picard_path, EulerConfig, PicardConfig};
pub use vi::{
    lipschitz_bound_mprime, optimal_rho, solve_vi, verify_assumptions, AssumptionReport,
    ViSolveResult, ViSolverConfig,
};
