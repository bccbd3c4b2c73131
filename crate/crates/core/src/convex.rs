//! Closed convex sets with closed-form Euclidean projections.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdviError};

/// A closed convex subset of `R^dim` whose nearest-point map is exact.
///
/// Box bounds may be `-inf`/`+inf`, in which case the coordinate is left
/// unclamped on that side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConvexSet {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    NonnegOrthant { dim: usize },
    WholeSpace { dim: usize },
    Product(Vec<ConvexSet>),
}

impl ConvexSet {
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(SdviError::DimensionMismatch {
                context: "box bounds",
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(SdviError::invalid("box must have positive dimension"));
        }
        for (j, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if lo.is_nan() || hi.is_nan() {
                return Err(SdviError::NonFinite("box bounds"));
            }
            if lo > hi {
                return Err(SdviError::invalid(format!(
                    "box lower bound {lo} exceeds upper bound {hi} at coordinate {j}"
                )));
            }
            if *lo == f64::INFINITY || *hi == f64::NEG_INFINITY {
                return Err(SdviError::invalid(format!("empty box at coordinate {j}")));
            }
        }
        Ok(ConvexSet::Box { lower, upper })
    }

    pub fn nonneg_orthant(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(SdviError::invalid("orthant must have positive dimension"));
        }
        Ok(ConvexSet::NonnegOrthant { dim })
    }

    pub fn whole_space(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(SdviError::invalid("space must have positive dimension"));
        }
        Ok(ConvexSet::WholeSpace { dim })
    }

    pub fn product(parts: Vec<ConvexSet>) -> Result<Self> {
        if parts.is_empty() {
            return Err(SdviError::invalid("product of zero sets"));
        }
        Ok(ConvexSet::Product(parts))
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Box { lower, .. } => lower.len(),
            ConvexSet::NonnegOrthant { dim } | ConvexSet::WholeSpace { dim } => *dim,
            ConvexSet::Product(parts) => parts.iter().map(ConvexSet::dim).sum(),
        }
    }

    /// Nearest point of the set to `v` in the Euclidean norm.
    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(v)?;
        let mut out = v.clone();
        self.project_into(out.as_mut_slice());
        Ok(out)
    }

    /// `‖v - project(v)‖`, zero exactly on members.
    pub fn distance(&self, v: &DVector<f64>) -> Result<f64> {
        let p = self.project(v)?;
        Ok((v - p).norm())
    }

    pub fn contains(&self, v: &DVector<f64>) -> bool {
        matches!(self.distance(v), Ok(d) if d == 0.0)
    }

    /// In-place projection; the caller guarantees the length and finiteness.
    pub(crate) fn project_into(&self, v: &mut [f64]) {
        match self {
            ConvexSet::Box { lower, upper } => {
                for ((x, lo), hi) in v.iter_mut().zip(lower).zip(upper) {
                    *x = x.max(*lo).min(*hi);
                }
            }
            ConvexSet::NonnegOrthant { .. } => {
                for x in v.iter_mut() {
                    *x = x.max(0.0);
                }
            }
            ConvexSet::WholeSpace { .. } => {}
            ConvexSet::Product(parts) => {
                let mut offset = 0;
                for part in parts {
                    let d = part.dim();
                    part.project_into(&mut v[offset..offset + d]);
                    offset += d;
                }
            }
        }
    }

    fn check_input(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim() {
            return Err(SdviError::DimensionMismatch {
                context: "projection input",
                expected: self.dim(),
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(SdviError::NonFinite("projection input"));
        }
        Ok(())
    }
}

/// Free-function form of [`ConvexSet::project`].
pub fn project(set: &ConvexSet, v: &DVector<f64>) -> Result<DVector<f64>> {
    set.project(v)
}

/// Free-function form of [`ConvexSet::distance`].
pub fn distance_to_set(set: &ConvexSet, v: &DVector<f64>) -> Result<f64> {
    set.distance(v)
}
