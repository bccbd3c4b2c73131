//! Builders for the two worked applications: a stochastic circuit with four
//! ideal diodes and a stochastic bridge-collapse oscillator.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::convex::ConvexSet;
use crate::error::{Result, SdviError};
use crate::problem::{ProblemConstants, SdviProblem};

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircuitParams {
    /// Diagonal of `M`; `0` leaves the VI merely monotone.
    pub epsilon: f64,
    /// State, control and time coefficients of the diffusion.
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub horizon: f64,
}

impl Default for CircuitParams {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            a: 0.0,
            b: 0.0,
            c: 0.0,
            horizon: 1.5,
        }
    }
}

impl CircuitParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(SdviError::invalid(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if ![self.a, self.b, self.c].iter().all(|v| v.is_finite()) {
            return Err(SdviError::NonFinite("circuit diffusion coefficients"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(SdviError::invalid("horizon must be positive"));
        }
        Ok(())
    }

    /// `ε = 0` is accepted but the VI is then not strongly monotone.
    pub fn is_strongly_monotone(&self) -> bool {
        self.epsilon > 0.0
    }
}

/// Fixed circuit matrices. `x = (x_1, x_2)` is the inductor current and the
/// capacitor tension; `u = (i_D1, v_D2, v_D3, i_D4)` collects the diode
/// currents and voltages.
pub mod circuit {
    use super::*;

    pub fn a_matrix() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[-2.0 / 3.0, 0.0, 0.0, -1.0 / 5.0])
    }

    pub fn b_matrix() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 4, &[0.0, 1.0 / 3.0, -1.0 / 3.0, 0.0, 1.0, 0.0, 0.0, 1.0])
    }

    pub fn q_matrix() -> DMatrix<f64> {
        DMatrix::from_row_slice(4, 2, &[0.0, 1.0, 1.0, 0.0, -1.0, 0.0, 0.0, 1.0])
    }

    pub fn m_matrix(epsilon: f64) -> DMatrix<f64> {
        #[rustfmt::skip]
        let m = DMatrix::from_row_slice(4, 4, &[
            epsilon, 0.0, -1.0, 0.0,
            0.0, epsilon, 0.0, 1.0,
            1.0, 0.0, epsilon, 0.0,
            0.0, -1.0, 0.0, epsilon,
        ]);
        m
    }

    pub fn c_matrix(a: f64) -> DMatrix<f64> {
        DMatrix::identity(2, 2) * a
    }

    pub fn d_matrix(b: f64) -> DMatrix<f64> {
        DMatrix::from_element(2, 4, b)
    }

    pub fn source(t: f64) -> DVector<f64> {
        DVector::from_column_slice(&[2.0 * (3.0 * t - PI / 3.0).sin(), 0.0])
    }

    pub fn noise_source(c: f64, t: f64) -> DVector<f64> {
        DVector::from_column_slice(&[c * t.sin(), 0.0])
    }

    pub fn constraint() -> ConvexSet {
        ConvexSet::Box {
            lower: vec![-10.0, -10.0, 0.0, 0.0],
            upper: vec![10.0, 10.0, 20.0, 20.0],
        }
    }

    pub fn initial_state() -> DVector<f64> {
        DVector::from_column_slice(&[-1.0, 0.0])
    }

    /// Initial control used by the reference experiment. Its last entry lies
    /// outside `K`; it is only a warm start and is projected first.
    pub fn reference_initial_control() -> DVector<f64> {
        DVector::from_column_slice(&[0.0, 0.0, 0.0, -1.0])
    }

    /// `[Q M]`, whose spectral norm is the Lipschitz modulus of the VI map.
    pub fn vi_matrix(epsilon: f64) -> DMatrix<f64> {
        let mut qm = DMatrix::zeros(4, 6);
        qm.view_mut((0, 0), (4, 2)).copy_from(&q_matrix());
        qm.view_mut((0, 2), (4, 4)).copy_from(&m_matrix(epsilon));
        qm
    }
}

/// Circuit SDVI:
///
/// ```text
/// dx = [A x + B u + f(t)] dt + [C x + D u + g(t)] dB_t,   x(0) = (-1, 0)
/// <Q x + M u, v - u> >= 0  for all v in K
/// ```
pub fn build_circuit(params: &CircuitParams) -> Result<SdviProblem> {
    params.validate()?;
    let p = *params;
    let (a, b) = (circuit::a_matrix(), circuit::b_matrix());
    let (q, m) = (circuit::q_matrix(), circuit::m_matrix(p.epsilon));
    let (cm, dm) = (circuit::c_matrix(p.a), circuit::d_matrix(p.b));
    SdviProblem::builder(2, 4, 1)
        .drift(move |t, x, u| &a * x + &b * u + circuit::source(t))
        .diffusion(move |t, x, u| {
            let col = &cm * x + &dm * u + circuit::noise_source(p.c, t);
            DMatrix::from_column_slice(2, 1, col.as_slice())
        })
        .vi_map(move |_, x, u, _| &q * x + &m * u)
        .constraint(circuit::constraint())
        .initial_state(circuit::initial_state())
        .horizon(p.horizon)
        .build()
}

/// Constants for the circuit: `C = ε`, `L_F = ‖[Q M]‖₂`, and Lipschitz and
/// growth bounds for the affine drift and diffusion. The source term enters
/// through its slope in `t` (6) and its bound (2). Fails for `ε = 0`.
pub fn circuit_constants(params: &CircuitParams) -> Result<ProblemConstants> {
    params.validate()?;
    if !params.is_strongly_monotone() {
        return Err(SdviError::invalid(
            "epsilon = 0: the circuit VI map is not strongly monotone",
        ));
    }
    let mut ab = DMatrix::zeros(2, 6);
    ab.view_mut((0, 0), (2, 2)).copy_from(&circuit::a_matrix());
    ab.view_mut((0, 2), (2, 4)).copy_from(&circuit::b_matrix());
    let mut cd = DMatrix::zeros(2, 6);
    cd.view_mut((0, 0), (2, 2)).copy_from(&circuit::c_matrix(params.a));
    cd.view_mut((0, 2), (2, 4)).copy_from(&circuit::d_matrix(params.b));
    let (ab_norm, cd_norm) = (spectral_norm(&ab), spectral_norm(&cd));
    ProblemConstants::new(
        ab_norm.max(6.0),
        cd_norm.max(params.c.abs()),
        spectral_norm(&circuit::vi_matrix(params.epsilon)),
        params.epsilon,
        ab_norm.max(2.0),
        cd_norm.max(params.c.abs()),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BridgeParams {
    /// Viscous damping.
    pub tau: f64,
    /// White-noise intensity on the velocity.
    pub k: f64,
    /// Initial velocity.
    pub theta: f64,
    pub horizon: f64,
}

impl Default for BridgeParams {
    fn default() -> Self {
        Self {
            tau: 1.0,
            k: 1.0,
            theta: 0.0,
            horizon: 1.0,
        }
    }
}

impl BridgeParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau", self.tau), ("k", self.k), ("theta", self.theta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SdviError::invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(SdviError::invalid("horizon must be positive"));
        }
        Ok(())
    }

    fn state_jacobian_norm(&self) -> f64 {
        let j = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, -0.4, -self.tau, -0.1]);
        spectral_norm(&j)
    }
}

/// Bridge SDVI with mass 10 and Hooke constants 4 (tension) and 1
/// (compression) substituted:
///
/// ```text
/// dy = (y_2, -2/5 y_1 - τ y_2 - 1/10 u + sin 4t) dt + (0, k) dB_t
/// 0 <= u ⊥ u + 3 y_1 >= 0,   y(0) = (0, θ)
/// ```
///
/// The complementarity condition is the VI with `F(u) = u + 3 y_1` over
/// `K = [0, ∞)`.
pub fn build_bridge(params: &BridgeParams) -> Result<SdviProblem> {
    params.validate()?;
    let p = *params;
    SdviProblem::builder(2, 1, 1)
        .drift(move |t, y, u| {
            DVector::from_column_slice(&[
                y[1],
                -0.4 * y[0] - p.tau * y[1] - 0.1 * u[0] + (4.0 * t).sin(),
            ])
        })
        .diffusion(move |_, _, _| DMatrix::from_column_slice(2, 1, &[0.0, p.k]))
        .vi_map(|_, y, u, _| DVector::from_element(1, u[0] + 3.0 * y[0]))
        .constraint(ConvexSet::NonnegOrthant { dim: 1 })
        .initial_state(DVector::from_column_slice(&[0.0, p.theta]))
        .horizon(p.horizon)
        .build()
}

/// `C = 1`, `L_F = √10`, plus drift and diffusion bounds.
pub fn bridge_constants(params: &BridgeParams) -> Result<ProblemConstants> {
    params.validate()?;
    let j = params.state_jacobian_norm();
    ProblemConstants::new(j.max(4.0), 0.0, 10f64.sqrt(), 1.0, j.max(1.0), params.k)
}

/// Unique solution `max(0, -3 y_1)` of `0 <= u ⊥ u + 3 y_1 >= 0`.
pub fn bridge_vi_oracle(y1: f64) -> f64 {
    (-3.0 * y1).max(0.0)
}
