//! All-pairs shift matrix: measurement, consistency checks, repair and the
//! least-squares solve for per-frame positions.
//!
//! Element `(i, j)` holds the measured translation of frame `j` relative to
//! frame `i`, so an ideal matrix built from stage positions `p` satisfies
//! `R_ij = p_j - p_i`. It is skew-symmetric by construction and additively
//! transitive, `R_ik = R_ij + R_jk`, which is what the outlier detector
//! checks.

mod drift;
mod outliers;
mod paths;
mod repair;
mod solve;

use ndarray::Array2;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::fft::Fft2;
use crate::peaks::{locate_peak, PeakMethod};
use crate::preprocess::{windowed_shape, WindowKind};
use crate::spectral::{correlate_spectra, frame_spectrum, CorrelationMethod, FourierMask};
use crate::{Error, ImageStack, Result};

pub use drift::{drift_profile, DriftProfile, DriftUnit};
pub use outliers::{default_threshold, detect_outliers, exclude_bad_frames, transitivity_error, OutlierMethod};
pub use paths::{candidate_path_count, ranked_paths, select_paths, Path};
pub use repair::repair_outliers;
pub use solve::{optimal_shifts, ShiftSolution};

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftMatrix {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub valid: Array2<bool>,
}

impl ShiftMatrix {
    /// All-zero, all-valid `n x n` matrix.
    pub fn zeros(n: usize) -> Self {
        Self {
            x: Array2::zeros((n, n)),
            y: Array2::zeros((n, n)),
            valid: Array2::from_elem((n, n), true),
        }
    }

    /// Ideal matrix `R_ij = p_j - p_i`.
    pub fn from_positions(positions: &[[f64; 2]]) -> Self {
        let n = positions.len();
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i + 1..n {
                m.set(i, j, [positions[j][0] - positions[i][0], positions[j][1] - positions[i][1]]);
            }
        }
        m
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> [f64; 2] {
        [self.x[[i, j]], self.y[[i, j]]]
    }

    /// Sets `R_ij` and its mirror `R_ji = -R_ij`.
    pub fn set(&mut self, i: usize, j: usize, v: [f64; 2]) {
        self.x[[i, j]] = v[0];
        self.y[[i, j]] = v[1];
        self.x[[j, i]] = -v[0];
        self.y[[j, i]] = -v[1];
    }

    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        self.valid[[i, j]]
    }

    pub fn set_valid(&mut self, i: usize, j: usize, valid: bool) {
        self.valid[[i, j]] = valid;
        self.valid[[j, i]] = valid;
    }

    /// Upper-triangle pairs currently marked invalid.
    pub fn invalid_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| !self.valid[[i, j]])
            .collect()
    }

    pub fn is_skew_symmetric(&self) -> bool {
        let n = self.len();
        (0..n).all(|i| {
            (0..n).all(|j| {
                self.x[[i, j]] == -self.x[[j, i]]
                    && self.y[[i, j]] == -self.y[[j, i]]
                    && self.valid[[i, j]] == self.valid[[j, i]]
            })
        })
    }

    /// Matrix restricted to `keep` (in the given order).
    pub fn submatrix(&self, keep: &[usize]) -> Self {
        let n = keep.len();
        Self {
            x: Array2::from_shape_fn((n, n), |(a, b)| self.x[[keep[a], keep[b]]]),
            y: Array2::from_shape_fn((n, n), |(a, b)| self.y[[keep[a], keep[b]]]),
            valid: Array2::from_shape_fn((n, n), |(a, b)| self.valid[[keep[a], keep[b]]]),
        }
    }
}

/// Everything needed to turn a frame pair into a relative shift.
#[derive(Debug, Clone)]
pub struct PairSettings {
    pub window: WindowKind,
    pub method: CorrelationMethod,
    /// Must match the windowed frame shape.
    pub mask: FourierMask,
    pub peak: PeakMethod,
}

/// A measured shift matrix with per-pair bookkeeping.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub matrix: ShiftMatrix,
    /// Pairs whose subpixel fit diverged and fell back to the pixel argmax.
    pub fit_fallbacks: Vec<(usize, usize)>,
    /// Pairs whose correlation failed; these start out invalid.
    pub failed_pairs: Vec<(usize, usize)>,
}

/// Correlates every pair `i < j` and completes the lower half by
/// skew-symmetry. Pairs run in parallel and are assembled in `(i, j)` order.
pub fn compute_shift_matrix(stack: &ImageStack, settings: &PairSettings) -> Result<Measurement> {
    let n = stack.len();
    if n < 2 {
        return Err(Error::TooFewFrames(n));
    }
    let shape = windowed_shape(stack.shape(), settings.window);
    if settings.mask.shape() != shape {
        return Err(Error::DimensionMismatch {
            context: "correlation mask".into(),
            expected: format!("{shape:?}"),
            found: format!("{:?}", settings.mask.shape()),
        });
    }
    let fft = Fft2::new(shape.0, shape.1);
    let spectra: Vec<Option<Array2<Complex64>>> = stack
        .frames
        .par_iter()
        .map(|f| frame_spectrum(f, settings.window, &fft).ok())
        .collect();

    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let results: Vec<Option<(f64, f64, bool)>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (fa, fb) = (spectra[i].as_ref()?, spectra[j].as_ref()?);
            let surface = correlate_spectra(fa, fb, settings.method, &settings.mask, &fft).ok()?;
            let peak = locate_peak(&surface, settings.peak).ok()?;
            Some((peak.shift.x, peak.shift.y, peak.fallback))
        })
        .collect();

    let mut matrix = ShiftMatrix::zeros(n);
    let mut fit_fallbacks = Vec::new();
    let mut failed_pairs = Vec::new();
    for (&(i, j), r) in pairs.iter().zip(results) {
        match r {
            Some((x, y, fallback)) => {
                matrix.set(i, j, [x, y]);
                if fallback {
                    fit_fallbacks.push((i, j));
                }
            }
            None => {
                matrix.set_valid(i, j, false);
                failed_pairs.push((i, j));
            }
        }
    }
    Ok(Measurement {
        matrix,
        fit_fallbacks,
        failed_pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::FourierMask;

    fn settings(shape: (usize, usize)) -> PairSettings {
        PairSettings {
            window: WindowKind::Hann,
            method: CorrelationMethod::Cross,
            mask: FourierMask::none(shape),
            peak: PeakMethod::default(),
        }
    }

    #[test]
    fn ideal_matrix_is_skew_symmetric() {
        let m = ShiftMatrix::from_positions(&[[0.0, 0.0], [1.5, -2.0], [3.25, 0.5]]);
        assert!(m.is_skew_symmetric());
        assert_eq!(m.get(1, 2), [1.75, 2.5]);
        assert_eq!(m.get(2, 1), [-1.75, -2.5]);
        assert_eq!(m.get(1, 1), [0.0, 0.0]);
    }

    #[test]
    fn identical_frames_give_zero_matrix() {
        let f = Array2::from_shape_fn((32, 32), |(r, c)| ((r * 7 + c * 3) % 11) as f64 + (c as f64 * 0.4).sin());
        let stack = ImageStack::new(vec![f.clone(), f.clone(), f], 1.0, None).unwrap();
        let m = compute_shift_matrix(&stack, &settings((32, 32))).unwrap();
        assert!(m.failed_pairs.is_empty());
        assert!(m.matrix.x.iter().chain(m.matrix.y.iter()).all(|v| v.abs() < 1e-9), "{:?}", m.matrix.x);
        assert!(m.matrix.is_skew_symmetric());
    }

    #[test]
    fn degenerate_frame_invalidates_its_pairs() {
        let f = Array2::from_shape_fn((16, 16), |(r, c)| (r as f64 * 0.7).sin() + (c as f64 * 0.3).cos());
        let flat = Array2::from_elem((16, 16), 1.0);
        let stack = ImageStack::new(vec![f.clone(), flat, f], 1.0, None).unwrap();
        let m = compute_shift_matrix(&stack, &settings((16, 16))).unwrap();
        assert_eq!(m.failed_pairs, vec![(0, 1), (1, 2)]);
        assert!(!m.matrix.is_valid(1, 0) && m.matrix.is_valid(0, 2));
    }

    #[test]
    fn mask_shape_must_match_window() {
        let f = Array2::from_shape_fn((16, 16), |(r, c)| (r * c) as f64);
        let stack = ImageStack::new(vec![f.clone(), f], 1.0, None).unwrap();
        let mut s = settings((16, 16));
        s.window = WindowKind::MirrorPad;
        assert!(compute_shift_matrix(&stack, &s).is_err());
        s.mask = FourierMask::none((32, 32));
        assert!(compute_shift_matrix(&stack, &s).is_ok());
    }

    #[test]
    fn submatrix_keeps_order() {
        let m = ShiftMatrix::from_positions(&[[0.0, 0.0], [1.0, 0.0], [3.0, 1.0], [6.0, 2.0]]);
        let s = m.submatrix(&[0, 2, 3]);
        assert_eq!(s.get(0, 1), [3.0, 1.0]);
        assert_eq!(s.get(1, 2), [3.0, 1.0]);
        assert!(s.is_skew_symmetric());
    }

    #[test]
    fn noiseless_synthetic_shifts_are_recovered() {
        use crate::synth::{generate_stack, preset, DriftModel};
        let mut p = preset("paper-like-40").unwrap();
        p.height = 128;
        p.width = 128;
        p.frame_count = 5;
        p.dose = None;
        p.lattice = [[8.0, 0.0], [0.0, 8.0]];
        for atom in &mut p.atoms {
            atom.width = 1.2;
        }
        p.drift = DriftModel::Explicit {
            positions: vec![[0.0, 0.0], [1.3, -0.6], [2.7, 0.4], [1.9, 2.2], [-0.8, 1.1]],
        };
        let (stack, truth) = generate_stack(&p).unwrap();
        let m = compute_shift_matrix(&stack, &settings((128, 128))).unwrap().matrix;
        let ideal = truth.shift_matrix();
        for i in 0..5 {
            for j in 0..5 {
                let (r, t) = (m.get(i, j), ideal.get(i, j));
                assert!((r[0] - t[0]).abs() < 0.05 && (r[1] - t[1]).abs() < 0.05, "({i}, {j}): {r:?} vs {t:?}");
            }
        }
    }

    #[test]
    fn forty_frames_give_780_pairs() {
        let f = Array2::from_shape_fn((16, 16), |(r, c)| (r as f64 * 0.7).sin() + (c as f64 * 0.3).cos());
        let stack = ImageStack::new(vec![f; 40], 1.0, None).unwrap();
        let m = compute_shift_matrix(&stack, &settings((16, 16))).unwrap().matrix;
        let measured = (0..40).flat_map(|i| (i + 1..40).map(move |j| (i, j))).count();
        assert_eq!(measured, 780);
        assert_eq!(m.len(), 40);
        assert!(m.valid.iter().all(|&v| v));
    }
}
