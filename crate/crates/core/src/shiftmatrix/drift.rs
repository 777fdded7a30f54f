//! Stage trajectory and velocity from the solved positions.

use serde::{Deserialize, Serialize};

use super::ShiftSolution;
use crate::StackMetadata;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftUnit {
    Pixel,
    Angstrom,
}

/// Positions and velocities of the included frames, in `unit` and
/// `unit`/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftProfile {
    pub unit: DriftUnit,
    pub frames: Vec<usize>,
    /// Frame index times frame time, in seconds.
    pub times: Vec<f64>,
    pub positions: Vec<[f64; 2]>,
    pub smoothed: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
}

impl DriftProfile {
    pub fn max_speed(&self) -> f64 {
        self.velocities.iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max)
    }
}

const SMOOTHING_SIGMA: f64 = 1.0;

pub fn drift_profile(solution: &ShiftSolution, metadata: &StackMetadata) -> DriftProfile {
    let frames = solution.included();
    let scale = metadata.pixel_size.unwrap_or(1.0);
    let unit = if metadata.pixel_size.is_some() { DriftUnit::Angstrom } else { DriftUnit::Pixel };
    let times: Vec<f64> = frames.iter().map(|&i| i as f64 * metadata.frame_time).collect();
    let positions: Vec<[f64; 2]> = frames
        .iter()
        .map(|&i| [solution.shifts[i][0] * scale, solution.shifts[i][1] * scale])
        .collect();
    let xs: Vec<f64> = positions.iter().map(|p| p[0]).collect();
    let ys: Vec<f64> = positions.iter().map(|p| p[1]).collect();
    let (sx, sy) = (smooth(&frames, &xs, SMOOTHING_SIGMA), smooth(&frames, &ys, SMOOTHING_SIGMA));
    let smoothed: Vec<[f64; 2]> = sx.iter().zip(&sy).map(|(&x, &y)| [x, y]).collect();
    let (vx, vy) = (derivative(&sx, &times), derivative(&sy, &times));
    DriftProfile {
        unit,
        frames,
        times,
        positions,
        smoothed,
        velocities: vx.into_iter().zip(vy).map(|(x, y)| [x, y]).collect(),
    }
}

/// Gaussian-weighted local linear fit over frame index, evaluated at each
/// sample. Unlike a plain kernel average it leaves linear trends intact at
/// the ends and across excluded frames.
fn smooth(frames: &[usize], v: &[f64], sigma: f64) -> Vec<f64> {
    let n = v.len();
    if n < 3 {
        return v.to_vec();
    }
    let reach = 4.0 * sigma;
    frames
        .iter()
        .map(|&fi| {
            let (mut sw, mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (&fj, &y) in frames.iter().zip(v) {
                let d = fj as f64 - fi as f64;
                if d.abs() > reach {
                    continue;
                }
                let w = (-d * d / (2.0 * sigma * sigma)).exp();
                sw += w;
                sx += w * d;
                sxx += w * d * d;
                sy += w * y;
                sxy += w * d * y;
            }
            let det = sw * sxx - sx * sx;
            if det.abs() < 1e-12 * sw * sw {
                sy / sw
            } else {
                // intercept of the weighted line at d = 0
                (sxx * sy - sx * sxy) / det
            }
        })
        .collect()
}

/// Central differences over the actual time gaps, one-sided at the ends.
fn derivative(v: &[f64], t: &[f64]) -> Vec<f64> {
    let n = v.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            (v[b] - v[a]) / (t[b] - t[a])
        })
        .collect()
}
