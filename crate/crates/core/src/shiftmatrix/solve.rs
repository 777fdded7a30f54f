//! Closed-form least-squares positions from a consistent shift matrix.

use serde::{Deserialize, Serialize};

use super::ShiftMatrix;
use crate::{Error, Result};

/// Per-frame positions in pixels, mean-centred over the included frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSolution {
    /// One entry per frame of the original stack. Excluded frames still get
    /// an estimate from their column, but take no part in the centring.
    pub shifts: Vec<[f64; 2]>,
    pub excluded: Vec<usize>,
}

impl ShiftSolution {
    pub fn included(&self) -> Vec<usize> {
        (0..self.shifts.len()).filter(|i| !self.excluded.contains(i)).collect()
    }
}

/// Minimizes `sum_ij |R_ij + r_i - r_j|^2` over the included frames.
///
/// With `R` skew-symmetric the normal equations reduce to
/// `r_i = (1/N') sum_j R_ji`, the mean of column `i`, once the origin is
/// fixed at the mean position.
pub fn optimal_shifts(m: &ShiftMatrix, excluded: &[usize]) -> Result<ShiftSolution> {
    let n = m.len();
    let included: Vec<usize> = (0..n).filter(|i| !excluded.contains(i)).collect();
    if included.is_empty() {
        return Err(Error::AllFramesExcluded);
    }
    let count = included.len() as f64;
    let shifts = (0..n)
        .map(|i| {
            let (sx, sy) = included
                .iter()
                .fold((0.0, 0.0), |(sx, sy), &j| (sx + m.x[[j, i]], sy + m.y[[j, i]]));
            [sx / count, sy / count]
        })
        .collect();
    let mut excluded = excluded.to_vec();
    excluded.sort_unstable();
    excluded.dedup();
    Ok(ShiftSolution { shifts, excluded })
}
