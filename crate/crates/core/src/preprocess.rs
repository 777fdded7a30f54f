//! Frame conditioning ahead of FFT correlation.

use std::f64::consts::PI;

use ndarray::{s, Array1, Array2};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::fft::Fft2;
use crate::{Error, Frame, Result};

/// Real-space boundary handling applied before the forward FFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    /// Leave the frame untouched (circular boundary).
    None,
    /// Separable 2D Hann taper.
    #[default]
    Hann,
    /// Reflect-pad to `2H x 2W`; doubles the FFT cost.
    MirrorPad,
    /// Periodic component of the periodic + smooth decomposition.
    PeriodicSmooth,
}

/// Zero mean, unit sample standard deviation (`n - 1` denominator).
pub fn normalize_frame(frame: &Frame) -> Result<Frame> {
    let n = frame.len();
    if n < 2 {
        return Err(Error::Degenerate("frame has fewer than two pixels".into()));
    }
    let mean = frame.sum() / n as f64;
    let var = frame.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::Degenerate("frame is constant".into()));
    }
    Ok(frame.mapv(|v| (v - mean) / std))
}

pub fn apply_window(frame: &Frame, kind: WindowKind) -> Frame {
    match kind {
        WindowKind::None => frame.clone(),
        WindowKind::Hann => {
            let (h, w) = frame.dim();
            let wy = hann(h);
            let wx = hann(w);
            Array2::from_shape_fn((h, w), |(r, c)| frame[[r, c]] * wy[r] * wx[c])
        }
        WindowKind::MirrorPad => mirror_pad(frame),
        WindowKind::PeriodicSmooth => periodic_smooth_decomposition(frame).0,
    }
}

/// Shape of a frame after [`apply_window`].
pub fn windowed_shape(shape: (usize, usize), kind: WindowKind) -> (usize, usize) {
    match kind {
        WindowKind::MirrorPad => (shape.0 * 2, shape.1 * 2),
        _ => shape,
    }
}

/// Symmetric Hann window, zero at both ends.
pub fn hann(n: usize) -> Array1<f64> {
    if n < 2 {
        return Array1::ones(n);
    }
    Array1::from_shape_fn(n, |i| 0.5 * (1.0 - (2.0 * PI * i as f64 / (n - 1) as f64).cos()))
}

pub fn mirror_pad(frame: &Frame) -> Frame {
    let (h, w) = frame.dim();
    let mut out = Array2::zeros((2 * h, 2 * w));
    out.slice_mut(s![..h, ..w]).assign(frame);
    out.slice_mut(s![..h, w..]).assign(&frame.slice(s![.., ..;-1]));
    out.slice_mut(s![h.., ..w]).assign(&frame.slice(s![..;-1, ..]));
    out.slice_mut(s![h.., w..]).assign(&frame.slice(s![..;-1, ..;-1]));
    out
}

/// Splits `frame` into a periodic component and a smooth component whose
/// sum is the input. The smooth part absorbs the jumps across the wrap-around
/// boundary, so the periodic part has no edge discontinuity.
pub fn periodic_smooth_decomposition(frame: &Frame) -> (Frame, Frame) {
    let (h, w) = frame.dim();
    let mut boundary = Array2::<f64>::zeros((h, w));
    for c in 0..w {
        let jump = frame[[h - 1, c]] - frame[[0, c]];
        boundary[[0, c]] += jump;
        boundary[[h - 1, c]] -= jump;
    }
    for r in 0..h {
        let jump = frame[[r, w - 1]] - frame[[r, 0]];
        boundary[[r, 0]] += jump;
        boundary[[r, w - 1]] -= jump;
    }

    let fft = Fft2::new(h, w);
    let mut spec = fft.forward_real(&boundary);
    let cy: Vec<f64> = (0..h).map(|q| (2.0 * PI * q as f64 / h as f64).cos()).collect();
    let cx: Vec<f64> = (0..w).map(|r| (2.0 * PI * r as f64 / w as f64).cos()).collect();
    for ((q, r), v) in spec.indexed_iter_mut() {
        let denom = 2.0 * cy[q] + 2.0 * cx[r] - 4.0;
        *v = if q == 0 && r == 0 { Complex64::default() } else { *v / denom };
    }
    fft.inverse(&mut spec);
    let smooth = spec.mapv(|c| c.re);
    let periodic = frame - &smooth;
    (periodic, smooth)
}
