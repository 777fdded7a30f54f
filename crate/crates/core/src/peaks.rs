//! Correlation-maximum location.
//!
//! On lattice images the correlation surface carries one local maximum per
//! lattice vector. When the true peak falls between pixels its intensity is
//! split over several pixels, and a wrong, pixel-centred lattice peak can
//! own the brightest pixel. Fitting a Gaussian to each of the brightest few
//! local maxima and comparing the fitted heights avoids most of those jumps.

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::spectral::CorrelationSurface;
use crate::{Error, Result};

/// Side length of the Gaussian fit window.
pub const FIT_WINDOW: usize = 7;
const HALF_WINDOW: isize = (FIT_WINDOW / 2) as isize;
const MAX_ITERATIONS: usize = 100;
const RELATIVE_TOLERANCE: f64 = 1e-6;
/// Below this width (px) the sampled peak no longer constrains its centre.
const MIN_SIGMA: f64 = 0.25;

/// A relative shift in pixels with the peak value it was read from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shift2D {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PeakMethod {
    /// Brightest pixel.
    Argmax,
    /// Gaussian fits to the `candidates` brightest local maxima.
    GaussianFit { candidates: usize },
}

impl Default for PeakMethod {
    fn default() -> Self {
        PeakMethod::GaussianFit { candidates: 5 }
    }
}

/// Outcome of [`locate_peak`]; `fallback` marks a fit that had to revert to
/// the pixel argmax.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakResult {
    pub shift: Shift2D,
    pub fallback: bool,
}

pub fn locate_peak(surface: &CorrelationSurface, method: PeakMethod) -> Result<PeakResult> {
    match method {
        PeakMethod::Argmax => Ok(PeakResult {
            shift: argmax_shift(surface),
            fallback: false,
        }),
        PeakMethod::GaussianFit { candidates } => {
            let maxima = find_local_maxima(surface, candidates)?;
            match fit_subpixel(surface, &maxima) {
                Some(shift) => Ok(PeakResult { shift, fallback: false }),
                None => Ok(PeakResult {
                    shift: argmax_shift(surface),
                    fallback: true,
                }),
            }
        }
    }
}

/// Interior pixels strictly greater than all 8 neighbours, brightest first,
/// at most `k` of them.
pub fn find_local_maxima(surface: &CorrelationSurface, k: usize) -> Result<Vec<(usize, usize)>> {
    if !(1..=10).contains(&k) {
        return Err(Error::InvalidParameter(format!("candidate count must be in [1, 10], got {k}")));
    }
    let v = &surface.values;
    let (h, w) = v.dim();
    let mut maxima = Vec::new();
    for r in 1..h.saturating_sub(1) {
        for c in 1..w.saturating_sub(1) {
            let x = v[[r, c]];
            let is_max = (r - 1..=r + 1).all(|rr| (c - 1..=c + 1).all(|cc| (rr == r && cc == c) || x > v[[rr, cc]]));
            if is_max {
                maxima.push((x, r, c));
            }
        }
    }
    maxima.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    Ok(maxima.into_iter().take(k).map(|(_, r, c)| (r, c)).collect())
}

/// Integer shift of the brightest pixel. Ties go to the smallest shift
/// magnitude, then to the lexicographically smallest `(y, x)`.
pub fn argmax_shift(surface: &CorrelationSurface) -> Shift2D {
    let mut best: Option<(f64, f64, (f64, f64))> = None;
    for ((r, c), &v) in surface.values.indexed_iter() {
        let (x, y) = surface.shift_at(r, c);
        let mag = x * x + y * y;
        let better = match best {
            None => true,
            Some((bv, bmag, (bx, by))) => {
                v > bv || (v == bv && (mag < bmag || (mag == bmag && (y, x) < (by, bx))))
            }
        };
        if better {
            best = Some((v, mag, (x, y)));
        }
    }
    let (score, _, (x, y)) = best.expect("correlation surface is non-empty");
    Shift2D { x, y, score }
}

/// Parameters of `A exp(-((x-cx)^2 / 2 sx^2 + (y-cy)^2 / 2 sy^2)) + c`,
/// with the centre in surface pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub cx: f64,
    pub cy: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub offset: f64,
    pub iterations: usize,
}

impl GaussianFit {
    pub fn peak_value(&self) -> f64 {
        self.amplitude + self.offset
    }
}

/// Fits every candidate and returns the centre of the fit with the largest
/// `A + c`, as a relative shift. `None` when every fit diverged.
///
/// A fit that collapses to a width below a quarter pixel cannot place its
/// centre between samples; such a candidate keeps its pixel position and
/// pixel value.
pub fn fit_subpixel(surface: &CorrelationSurface, candidates: &[(usize, usize)]) -> Option<Shift2D> {
    let (cy0, cx0) = surface.center();
    candidates
        .iter()
        .filter_map(|&(r, c)| {
            let fit = fit_gaussian(surface, r, c)?;
            if fit.sigma_x < MIN_SIGMA || fit.sigma_y < MIN_SIGMA {
                Some((c as f64, r as f64, surface.values[[r, c]]))
            } else {
                Some((fit.cx, fit.cy, fit.peak_value()))
            }
        })
        .max_by(|a, b| a.2.total_cmp(&b.2))
        .map(|(cx, cy, score)| Shift2D {
            x: cx - cx0 as f64,
            y: cy - cy0 as f64,
            score,
        })
}

/// Levenberg-Marquardt fit of an axis-aligned Gaussian plus constant over the
/// 7x7 window around `(row, col)` (clipped at the surface border).
///
/// Returns `None` on divergence: a centre outside the window, a
/// non-positive width or a non-finite residual.
pub fn fit_gaussian(surface: &CorrelationSurface, row: usize, col: usize) -> Option<GaussianFit> {
    let v = &surface.values;
    let (h, w) = v.dim();
    // local coordinates relative to the candidate pixel keep the fit exactly
    // translation-equivariant
    let mut pts: Vec<(f64, f64, f64)> = Vec::with_capacity(FIT_WINDOW * FIT_WINDOW);
    for dy in -HALF_WINDOW..=HALF_WINDOW {
        for dx in -HALF_WINDOW..=HALF_WINDOW {
            let (r, c) = (row as isize + dy, col as isize + dx);
            if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
                pts.push((dx as f64, dy as f64, v[[r as usize, c as usize]]));
            }
        }
    }
    if pts.len() < 12 {
        return None;
    }

    let mut p = initial_guess(&pts);
    let mut cost = sum_sq(&pts, &p)?;
    let mut lambda = 1e-3;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = normal_equations(&pts, &p);
        let mut damped = jtj;
        for i in 0..6 {
            damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
        }
        let Some(step) = damped.lu().solve(&(-jtr)) else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
            continue;
        };
        let trial = p + step;
        match sum_sq(&pts, &trial) {
            Some(trial_cost) if trial_cost < cost && trial[3] > 0.0 && trial[4] > 0.0 => {
                let improvement = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
                p = trial;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                if improvement < RELATIVE_TOLERANCE {
                    break;
                }
            }
            _ => {
                lambda *= 10.0;
                if lambda > 1e12 {
                    break;
                }
            }
        }
    }

    let [amplitude, x0, y0, sigma_x, sigma_y, offset] = [p[0], p[1], p[2], p[3], p[4], p[5]];
    let limit = HALF_WINDOW as f64 + 0.5;
    let ok = p.iter().all(|v| v.is_finite())
        && cost.is_finite()
        && sigma_x > 0.0
        && sigma_y > 0.0
        && x0.abs() <= limit
        && y0.abs() <= limit;
    ok.then_some(GaussianFit {
        amplitude,
        cx: col as f64 + x0,
        cy: row as f64 + y0,
        sigma_x,
        sigma_y,
        offset,
        iterations,
    })
}

// parameter order: [A, cx, cy, sx, sy, c]
fn model(p: &Vector6<f64>, x: f64, y: f64) -> (f64, f64) {
    let (dx, dy) = (x - p[1], y - p[2]);
    let e = (-(dx * dx / (2.0 * p[3] * p[3]) + dy * dy / (2.0 * p[4] * p[4]))).exp();
    (p[0] * e + p[5], e)
}

fn sum_sq(pts: &[(f64, f64, f64)], p: &Vector6<f64>) -> Option<f64> {
    let s: f64 = pts.iter().map(|&(x, y, z)| (model(p, x, y).0 - z).powi(2)).sum();
    s.is_finite().then_some(s)
}

fn normal_equations(pts: &[(f64, f64, f64)], p: &Vector6<f64>) -> (Matrix6<f64>, Vector6<f64>) {
    let mut jtj = Matrix6::zeros();
    let mut jtr = Vector6::zeros();
    for &(x, y, z) in pts {
        let (value, e) = model(p, x, y);
        let (dx, dy) = (x - p[1], y - p[2]);
        let (sx2, sy2) = (p[3] * p[3], p[4] * p[4]);
        let ae = p[0] * e;
        let j = Vector6::new(
            e,
            ae * dx / sx2,
            ae * dy / sy2,
            ae * dx * dx / (sx2 * p[3]),
            ae * dy * dy / (sy2 * p[4]),
            1.0,
        );
        jtj += j * j.transpose();
        jtr += j * (value - z);
    }
    (jtj, jtr)
}

fn initial_guess(pts: &[(f64, f64, f64)]) -> Vector6<f64> {
    let min = pts.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
    let peak = pts
        .iter()
        .find(|p| p.0 == 0.0 && p.1 == 0.0)
        .map(|p| p.2)
        .unwrap_or_else(|| pts.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max));
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for &(x, y, z) in pts {
        let wgt = z - min;
        sw += wgt;
        sx += wgt * x;
        sy += wgt * y;
    }
    let (mx, my) = if sw > 0.0 { (sx / sw, sy / sw) } else { (0.0, 0.0) };
    let (mut vx, mut vy) = (0.0, 0.0);
    for &(x, y, z) in pts {
        let wgt = z - min;
        vx += wgt * (x - mx).powi(2);
        vy += wgt * (y - my).powi(2);
    }
    let (sx0, sy0) = if sw > 0.0 {
        ((vx / sw).sqrt().clamp(0.5, 3.0), (vy / sw).sqrt().clamp(0.5, 3.0))
    } else {
        (1.0, 1.0)
    };
    Vector6::new(peak - min, mx.clamp(-1.0, 1.0), my.clamp(-1.0, 1.0), sx0, sy0, min)
}
