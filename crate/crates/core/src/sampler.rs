//! Uniform time grids and Brownian increments.
//!
//! Every path draws from its own ChaCha8 generator. The generator key is
//! `splitmix64(seed ^ splitmix64(path_index))`; stream 0 of that key feeds the
//! Brownian increments and stream `node + 1` feeds the per-node scenario
//! handle. Ensembles are therefore independent of evaluation order.
//!
//! Standard normals come from the Box–Muller transform (cosine branch first,
//! then the cached sine branch), consumed step-major then component-major.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdviError};

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn path_key(seed: u64, path_index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(path_index))
}

pub(crate) const BROWNIAN_STREAM: u64 = 0;

pub(crate) fn scenario_stream(node: usize) -> u64 {
    node as u64 + 1
}

pub(crate) fn path_rng(seed: u64, path_index: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(path_key(seed, path_index));
    rng.set_stream(stream);
    rng
}

/// Box–Muller standard normal generator over any uniform source.
#[derive(Debug, Clone)]
pub struct BoxMuller<R> {
    rng: R,
    spare: Option<f64>,
}

impl<R: Rng> BoxMuller<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the logarithm finite.
        let u1 = 1.0 - self.rng.random::<f64>();
        let u2 = self.rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

/// Uniform grid `t_i = i·h`, `h = T/N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    num_steps: usize,
    step: f64,
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(horizon: f64, num_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(SdviError::invalid(format!("horizon must be positive, got {horizon}")));
        }
        if num_steps == 0 {
            return Err(SdviError::invalid("number of steps must be at least 1"));
        }
        let step = horizon / num_steps as f64;
        let nodes = (0..=num_steps).map(|i| i as f64 * step).collect();
        Ok(Self {
            horizon,
            num_steps,
            step,
            nodes,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    /// Index of the grid node equal to `t` up to a relative `1e-12`.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let pos = (t / self.step).round();
        if pos < 0.0 || pos > self.num_steps as f64 {
            return None;
        }
        let i = pos as usize;
        let tol = 1e-12 * self.horizon.max(1.0);
        ((self.nodes[i] - t).abs() <= tol).then_some(i)
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.num_steps == other.num_steps
            && (self.horizon - other.horizon).abs() <= 1e-12 * self.horizon.max(other.horizon)
    }
}

/// `make_grid` in free-function form.
pub fn make_grid(horizon: f64, num_steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(horizon, num_steps)
}

/// Wiener increments `ΔB_i = B_{t_{i+1}} - B_{t_i}` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    pub grid: TimeGrid,
    pub noise_dim: usize,
    pub increments: Vec<DVector<f64>>,
    pub seed: u64,
    pub path_index: u64,
}

impl BrownianPath {
    /// `B_{t_i}` by left-to-right accumulation, `B_0 = 0`.
    pub fn value_at(&self, node: usize) -> DVector<f64> {
        let mut b = DVector::zeros(self.noise_dim);
        for inc in &self.increments[..node] {
            b += inc;
        }
        b
    }

    /// Brownian path whose increment `j` is the left-to-right sum of fine
    /// increments `j·factor .. (j+1)·factor`. Same underlying motion, coarser grid.
    pub fn coarsen(&self, factor: usize) -> Result<BrownianPath> {
        let n = self.grid.num_steps();
        if factor == 0 || !n.is_multiple_of(factor) {
            return Err(SdviError::invalid(format!(
                "coarsening factor {factor} does not divide {n} steps"
            )));
        }
        let grid = TimeGrid::new(self.grid.horizon(), n / factor)?;
        let increments = self
            .increments
            .chunks(factor)
            .map(|chunk| {
                let mut acc = chunk[0].clone();
                for inc in &chunk[1..] {
                    acc += inc;
                }
                acc
            })
            .collect();
        Ok(BrownianPath {
            grid,
            noise_dim: self.noise_dim,
            increments,
            seed: self.seed,
            path_index: self.path_index,
        })
    }
}

/// Draws `N` increments `√h·Z` with `Z` standard normal per component.
pub fn sample_brownian(
    grid: &TimeGrid,
    noise_dim: usize,
    seed: u64,
    path_index: u64,
) -> Result<BrownianPath> {
    if noise_dim == 0 {
        return Err(SdviError::invalid("noise dimension must be at least 1"));
    }
    let mut normals = BoxMuller::new(path_rng(seed, path_index, BROWNIAN_STREAM));
    let sqrt_h = grid.step().sqrt();
    let increments = (0..grid.num_steps())
        .map(|_| DVector::from_fn(noise_dim, |_, _| sqrt_h * normals.next_normal()))
        .collect();
    Ok(BrownianPath {
        grid: grid.clone(),
        noise_dim,
        increments,
        seed,
        path_index,
    })
}

pub fn coarsen(path: &BrownianPath, factor: usize) -> Result<BrownianPath> {
    path.coarsen(factor)
}
