//! Applying the solved shifts: subpixel frame shifting, coverage-weighted
//! averaging and image diagnostics.

use std::f64::consts::PI;

use ndarray::{Array2, Zip};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::fft::{fftshift, frequencies, Fft2};
use crate::shiftmatrix::ShiftSolution;
use crate::{Error, Frame, ImageStack, Result};

/// A shifted frame and the pixels not contaminated by wrap-around.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedFrame {
    pub image: Frame,
    pub valid: Array2<bool>,
}

/// Multiplies an FFT-ordered spectrum by the phase ramp that translates its
/// image by `shift = [dx, dy]`.
pub(crate) fn apply_shift_ramp(spec: &mut Array2<Complex64>, shift: [f64; 2]) {
    let (h, w) = spec.dim();
    let ramp = |n: usize, s: f64| -> Vec<Complex64> {
        frequencies(n)
            .into_iter()
            .enumerate()
            .map(|(i, k)| {
                if n % 2 == 0 && i == n / 2 {
                    Complex64::new((PI * s).cos(), 0.0)
                } else {
                    Complex64::from_polar(1.0, -2.0 * PI * k * s)
                }
            })
            .collect()
    };
    let (py, px) = (ramp(h, shift[1]), ramp(w, shift[0]));
    for ((r, c), v) in spec.indexed_iter_mut() {
        *v *= py[r] * px[c];
    }
}

/// Largest shift magnitude `shift_frame` accepts for a frame of `shape`.
pub fn shift_bound(shape: (usize, usize)) -> f64 {
    shape.0.min(shape.1) as f64 / 4.0
}

/// Moves the content of `frame` by `shift = [dx, dy]` pixels with the
/// Fourier shift theorem, so `out(x) = frame(x - shift)` circularly.
///
/// The Nyquist row and column get the real factor `cos(pi * s)`, the
/// Hermitian part of the phase ramp, which keeps the result real. The
/// `ceil(|s|)` rows or columns on the side where wrapped content enters are
/// marked invalid.
pub fn shift_frame(frame: &Frame, shift: [f64; 2]) -> Result<ShiftedFrame> {
    let (h, w) = frame.dim();
    let bound = shift_bound((h, w));
    let [sx, sy] = shift;
    if !(sx.is_finite() && sy.is_finite()) || sx.hypot(sy) >= bound {
        return Err(Error::ShiftOutOfBounds { x: sx, y: sy, bound });
    }
    let fft = Fft2::new(h, w);
    let mut spec = fft.forward_real(frame);
    apply_shift_ramp(&mut spec, shift);
    fft.inverse(&mut spec);
    let image = spec.mapv(|v| v.re);

    let (mx, my) = (sx.abs().ceil() as usize, sy.abs().ceil() as usize);
    let valid = Array2::from_shape_fn((h, w), |(r, c)| {
        let col_ok = if sx >= 0.0 { c >= mx } else { c + mx < w };
        let row_ok = if sy >= 0.0 { r >= my } else { r + my < h };
        col_ok && row_ok
    });
    Ok(ShiftedFrame { image, valid })
}

/// Registered average with per-pixel contribution counts.
#[derive(Debug, Clone, PartialEq)]
pub struct AverageImage {
    /// Mean over contributing frames; zero where nothing contributed.
    pub image: Frame,
    pub count: Array2<u32>,
    /// Number of frames averaged.
    pub frames: u32,
}

impl AverageImage {
    pub fn valid(&self) -> Array2<bool> {
        self.count.mapv(|c| c > 0)
    }

    /// Pixels covered by every averaged frame.
    pub fn full_coverage(&self) -> Array2<bool> {
        self.count.mapv(|c| c == self.frames)
    }
}

/// Shifts every included frame by `-r_i` and averages per pixel over the
/// frames whose valid region covers it.
pub fn average_stack(stack: &ImageStack, solution: &ShiftSolution) -> Result<AverageImage> {
    if solution.shifts.len() != stack.len() {
        return Err(Error::DimensionMismatch {
            context: "shift solution".into(),
            expected: format!("{} frames", stack.len()),
            found: format!("{} shifts", solution.shifts.len()),
        });
    }
    let included = solution.included();
    if included.is_empty() {
        return Err(Error::AllFramesExcluded);
    }
    let shifted: Vec<ShiftedFrame> = included
        .par_iter()
        .map(|&i| {
            let r = solution.shifts[i];
            shift_frame(&stack.frames[i], [-r[0], -r[1]])
        })
        .collect::<Result<_>>()?;

    let shape = stack.shape();
    let mut sum = Array2::<f64>::zeros(shape);
    let mut count = Array2::<u32>::zeros(shape);
    for s in &shifted {
        Zip::from(&mut sum)
            .and(&mut count)
            .and(&s.image)
            .and(&s.valid)
            .for_each(|acc, n, &v, &ok| {
                if ok {
                    *acc += v;
                    *n += 1;
                }
            });
    }
    let image = Zip::from(&sum).and(&count).map_collect(|&s, &n| if n > 0 { s / n as f64 } else { 0.0 });
    Ok(AverageImage {
        image,
        count,
        frames: included.len() as u32,
    })
}

const SNR_SIGMA: f64 = 2.0;

/// Separable Gaussian blur, kernel truncated at 4 sigma, mirror boundaries
/// (`d c b a | a b c d`).
pub fn gaussian_blur(image: &Frame, sigma: f64) -> Frame {
    let radius = (4.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / total).collect();
    let reflect = |i: isize, n: isize| -> usize {
        let period = 2 * n;
        let mut j = i.rem_euclid(period);
        if j >= n {
            j = period - 1 - j;
        }
        j as usize
    };
    let (h, w) = image.dim();
    let (hi, wi) = (h as isize, w as isize);
    let rows = Array2::from_shape_fn((h, w), |(r, c)| {
        (-radius..=radius)
            .zip(&kernel)
            .map(|(k, g)| g * image[[r, reflect(c as isize + k, wi)]])
            .sum::<f64>()
    });
    Array2::from_shape_fn((h, w), |(r, c)| {
        (-radius..=radius)
            .zip(&kernel)
            .map(|(k, g)| g * rows[[reflect(r as isize + k, hi), c]])
            .sum::<f64>()
    })
}

/// Ratio of the standard deviations of the smooth part (Gaussian blur,
/// sigma 2 px) and the residual, over `region` (the whole image when
/// `None`).
pub fn estimate_snr(image: &Frame, region: Option<&Array2<bool>>) -> Result<f64> {
    if image.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("image has non-finite pixels".into()));
    }
    if let Some(mask) = region {
        if mask.dim() != image.dim() {
            return Err(Error::DimensionMismatch {
                context: "SNR region".into(),
                expected: format!("{:?}", image.dim()),
                found: format!("{:?}", mask.dim()),
            });
        }
    }
    let signal = gaussian_blur(image, SNR_SIGMA);
    let inside = |r: usize, c: usize| region.is_none_or(|m| m[[r, c]]);
    let std = |f: &dyn Fn(usize, usize) -> f64| -> Option<f64> {
        let vals: Vec<f64> = image
            .indexed_iter()
            .filter(|((r, c), _)| inside(*r, *c))
            .map(|((r, c), _)| f(r, c))
            .collect();
        if vals.len() < 2 {
            return None;
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        Some((vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt())
    };
    let degenerate = || Error::Degenerate("image is constant over the SNR region".into());
    let s = std(&|r, c| signal[[r, c]]).ok_or_else(degenerate)?;
    let n = std(&|r, c| image[[r, c]] - signal[[r, c]]).ok_or_else(degenerate)?;
    if !(n > 0.0) {
        return Err(degenerate());
    }
    Ok(s / n)
}

/// `log(1 + |FFT|)` with the zero frequency at `(H/2, W/2)`.
pub fn power_spectrum(image: &Frame) -> Frame {
    let fft = Fft2::new(image.nrows(), image.ncols());
    fftshift(&fft.forward_real(image).mapv(|v| v.norm().ln_1p()))
}

/// Median of a centred spectrum over rings of unit width in `|k|` (pixels
/// from the centre), up to the inscribed circle.
pub fn azimuthal_median(spectrum: &Frame) -> Vec<f64> {
    let (h, w) = spectrum.dim();
    let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
    let rings = h.min(w) / 2;
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); rings];
    for ((r, c), &v) in spectrum.indexed_iter() {
        let d = (r as f64 - cy).hypot(c as f64 - cx).round() as usize;
        if d < rings {
            bins[d].push(v);
        }
    }
    bins.into_iter()
        .map(|mut b| {
            b.sort_by(f64::total_cmp);
            let n = b.len();
            if n % 2 == 1 {
                b[n / 2]
            } else {
                0.5 * (b[n / 2 - 1] + b[n / 2])
            }
        })
        .collect()
}
