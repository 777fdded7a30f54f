//! Thin 2D FFT layer over `rustfft`.

use std::sync::Arc;

use ndarray::{Array2, Axis};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Planned forward and inverse 2D transforms for one frame shape.
///
/// The inverse is normalized by `1 / (height * width)`, so
/// `inverse(forward(x)) == x` up to rounding.
#[derive(Clone)]
pub struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish()
    }
}

impl Fft2 {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn forward(&self, data: &mut Array2<Complex64>) {
        self.transform(data, &self.row_fwd, &self.col_fwd);
    }

    pub fn inverse(&self, data: &mut Array2<Complex64>) {
        self.transform(data, &self.row_inv, &self.col_inv);
        let scale = 1.0 / (self.height * self.width) as f64;
        data.mapv_inplace(|c| c * scale);
    }

    pub fn forward_real(&self, image: &Array2<f64>) -> Array2<Complex64> {
        let mut data = image.mapv(|v| Complex64::new(v, 0.0));
        self.forward(&mut data);
        data
    }

    fn transform(&self, data: &mut Array2<Complex64>, rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        assert_eq!(
            data.dim(),
            (self.height, self.width),
            "array shape does not match the planned transform"
        );
        let mut scratch = vec![Complex64::default(); rows.get_inplace_scratch_len().max(cols.get_inplace_scratch_len())];
        for mut row in data.axis_iter_mut(Axis(0)) {
            let slice = row.as_slice_mut().expect("rows of a standard-layout array are contiguous");
            rows.process_with_scratch(slice, &mut scratch);
        }
        let mut column = vec![Complex64::default(); self.height];
        for mut col in data.axis_iter_mut(Axis(1)) {
            for (dst, src) in column.iter_mut().zip(col.iter()) {
                *dst = *src;
            }
            cols.process_with_scratch(&mut column, &mut scratch);
            for (dst, src) in col.iter_mut().zip(column.iter()) {
                *dst = *src;
            }
        }
    }
}

/// Sample frequencies in cycles/px, in FFT order (`0, 1/n, ..., -1/n`).
///
/// For even `n` the Nyquist bin is reported as `-0.5`.
pub fn frequencies(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let signed = if i < n.div_ceil(2) { i as isize } else { i as isize - n as isize };
            signed as f64 / n as f64
        })
        .collect()
}

/// Move the zero-frequency (or zero-shift) element to index `(h/2, w/2)`.
pub fn fftshift<T: Clone>(a: &Array2<T>) -> Array2<T> {
    let (h, w) = a.dim();
    roll(a, h / 2, w / 2)
}

/// Inverse of [`fftshift`].
pub fn ifftshift<T: Clone>(a: &Array2<T>) -> Array2<T> {
    let (h, w) = a.dim();
    roll(a, h - h / 2, w - w / 2)
}

/// Circular roll: `out[(r + dy) % h, (c + dx) % w] = a[r, c]`.
pub fn roll<T: Clone>(a: &Array2<T>, dy: usize, dx: usize) -> Array2<T> {
    let (h, w) = a.dim();
    Array2::from_shape_fn((h, w), |(r, c)| a[[(r + h - dy % h) % h, (c + w - dx % w) % w]].clone())
}
