//! Fourier weighting masks and frequency-domain correlation.

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::fft::{fftshift, frequencies, Fft2};
use crate::preprocess::{apply_window, normalize_frame, WindowKind};
use crate::{Error, Frame, ImageStack, Result};

/// Correlation function applied to a pair of spectra.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationMethod {
    #[default]
    Cross,
    /// Cross-power spectrum divided by `sqrt(|Fa| |Fb|)`.
    Mutual,
    /// Cross-power spectrum divided by `|Fa| |Fb|`.
    Phase,
}

/// How a [`FourierMask`] is to be built. Frequencies are in cycles/px.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MaskSpec {
    #[default]
    None,
    /// Gaussian roll-off with standard deviation `k_max`.
    Lowpass { k_max: f64 },
    /// Difference of Gaussians (`k_max` minus `k_min`), peak-normalized and clipped to `[0, 1]`.
    Bandpass { k_min: f64, k_max: f64 },
    /// Gaussian with principal axes along the reciprocal basis and per-axis
    /// standard deviation `axis_scale * |b_i|`. Without an explicit `basis`
    /// the basis is detected from the stack.
    AnisotropicGaussian {
        axis_scale: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        basis: Option<Vec<[f64; 2]>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    None,
    Lowpass,
    Bandpass,
    AnisotropicGaussian,
    Custom,
}

/// Weights `w(k)` on the FFT frequency grid (FFT order, not centered).
#[derive(Debug, Clone, PartialEq)]
pub struct FourierMask {
    pub kind: MaskKind,
    pub weights: Array2<f64>,
    /// Reciprocal basis the mask was built from, cycles/px as `[kx, ky]`.
    pub basis: Vec<[f64; 2]>,
}

impl FourierMask {
    pub fn none(shape: (usize, usize)) -> Self {
        Self {
            kind: MaskKind::None,
            weights: Array2::ones(shape),
            basis: Vec::new(),
        }
    }

    /// Wraps user weights given in FFT order. They must lie in `[0, 1]` and be
    /// symmetric under `k -> -k`.
    pub fn custom(weights: Array2<f64>) -> Result<Self> {
        let (h, w) = weights.dim();
        for ((r, c), &v) in weights.indexed_iter() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("mask weight {v} at ({r}, {c}) outside [0, 1]")));
            }
            let mirror = weights[[(h - r) % h, (w - c) % w]];
            if (mirror - v).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "mask is not symmetric under k -> -k at ({r}, {c})"
                )));
            }
        }
        Ok(Self {
            kind: MaskKind::Custom,
            weights,
            basis: Vec::new(),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.weights.dim()
    }

    /// Weights with the zero frequency moved to the array center, for display.
    pub fn centered(&self) -> Array2<f64> {
        fftshift(&self.weights)
    }
}

fn check_cutoff(name: &str, k: f64) -> Result<()> {
    if k.is_finite() && k > 0.0 && k <= 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must lie in (0, 0.5] cycles/px, got {k}")))
    }
}

fn grid(shape: (usize, usize), mut f: impl FnMut(f64, f64) -> f64) -> Array2<f64> {
    let (h, w) = shape;
    let fy = frequencies(h);
    let fx = frequencies(w);
    Array2::from_shape_fn(shape, |(r, c)| f(fx[c], fy[r]))
}

// The Nyquist row and column map onto themselves under k -> -k, so an
// anisotropic profile must be averaged with its mirror there.
fn symmetrize(weights: Array2<f64>) -> Array2<f64> {
    let (h, w) = weights.dim();
    Array2::from_shape_fn((h, w), |(r, c)| 0.5 * (weights[[r, c]] + weights[[(h - r) % h, (w - c) % w]]))
}

/// Builds the mask for `spec` on a frame of `shape`. `basis` is used by the
/// anisotropic Gaussian when the spec itself carries none.
pub fn build_mask(spec: &MaskSpec, shape: (usize, usize), basis: Option<&[[f64; 2]]>) -> Result<FourierMask> {
    match spec {
        MaskSpec::None => Ok(FourierMask::none(shape)),
        &MaskSpec::Lowpass { k_max } => {
            check_cutoff("k_max", k_max)?;
            let inv = 1.0 / (2.0 * k_max * k_max);
            Ok(FourierMask {
                kind: MaskKind::Lowpass,
                weights: grid(shape, |kx, ky| (-(kx * kx + ky * ky) * inv).exp()),
                basis: Vec::new(),
            })
        }
        &MaskSpec::Bandpass { k_min, k_max } => {
            check_cutoff("k_min", k_min)?;
            check_cutoff("k_max", k_max)?;
            if k_min >= k_max {
                return Err(Error::InvalidParameter(format!(
                    "bandpass needs k_min < k_max, got {k_min} >= {k_max}"
                )));
            }
            let dog = |k2: f64| (-k2 / (2.0 * k_max * k_max)).exp() - (-k2 / (2.0 * k_min * k_min)).exp();
            // the difference of Gaussians peaks where its derivative in k^2 vanishes
            let (a, b) = (1.0 / (2.0 * k_max * k_max), 1.0 / (2.0 * k_min * k_min));
            let peak = dog((b / a).ln() / (b - a));
            Ok(FourierMask {
                kind: MaskKind::Bandpass,
                weights: grid(shape, |kx, ky| (dog(kx * kx + ky * ky) / peak).clamp(0.0, 1.0)),
                basis: Vec::new(),
            })
        }
        MaskSpec::AnisotropicGaussian { axis_scale, basis: own } => {
            let axis_scale = *axis_scale;
            if !(axis_scale.is_finite() && axis_scale > 0.0) {
                return Err(Error::InvalidParameter(format!("axis_scale must be > 0, got {axis_scale}")));
            }
            let basis: Vec<[f64; 2]> = own
                .as_deref()
                .or(basis)
                .ok_or_else(|| Error::InvalidParameter("anisotropic-gaussian mask needs a reciprocal basis".into()))?
                .to_vec();
            let weights = symmetrize(anisotropic_gaussian(shape, &basis, axis_scale)?);
            Ok(FourierMask {
                kind: MaskKind::AnisotropicGaussian,
                weights,
                basis,
            })
        }
    }
}

fn anisotropic_gaussian(shape: (usize, usize), basis: &[[f64; 2]], scale: f64) -> Result<Array2<f64>> {
    let norm = |b: &[f64; 2]| b[0].hypot(b[1]);
    match basis {
        [b] => {
            let n = norm(b);
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::InvalidParameter("reciprocal basis vector must be nonzero".into()));
            }
            let sigma = scale * n;
            Ok(grid(shape, |kx, ky| (-(kx * kx + ky * ky) / (2.0 * sigma * sigma)).exp()))
        }
        [b1, b2] => {
            let det = b1[0] * b2[1] - b1[1] * b2[0];
            if !(det.abs() > 1e-9 * norm(b1) * norm(b2)) {
                return Err(Error::InvalidParameter("reciprocal basis vectors are collinear".into()));
            }
            // fractional coordinates c with k = c1 b1 + c2 b2
            let s2 = 2.0 * scale * scale;
            Ok(grid(shape, |kx, ky| {
                let c1 = (kx * b2[1] - ky * b2[0]) / det;
                let c2 = (b1[0] * ky - b1[1] * kx) / det;
                (-(c1 * c1 + c2 * c2) / s2).exp()
            }))
        }
        _ => Err(Error::InvalidParameter(format!(
            "reciprocal basis needs 1 or 2 vectors, got {}",
            basis.len()
        ))),
    }
}

/// A correlation map with zero relative shift at `(H/2, W/2)`.
///
/// Element `(row, col)` holds the correlation for the relative shift
/// `(dx, dy) = (col - W/2, row - H/2)` of the second image with respect to
/// the first.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSurface {
    pub values: Array2<f64>,
}

impl CorrelationSurface {
    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn center(&self) -> (usize, usize) {
        let (h, w) = self.dim();
        (h / 2, w / 2)
    }

    /// Relative shift `(dx, dy)` represented by a pixel.
    pub fn shift_at(&self, row: usize, col: usize) -> (f64, f64) {
        let (cy, cx) = self.center();
        (col as f64 - cx as f64, row as f64 - cy as f64)
    }
}

/// Normalizes and windows a frame, then takes its spectrum.
pub fn frame_spectrum(frame: &Frame, window: WindowKind, fft: &Fft2) -> Result<Array2<Complex64>> {
    let prepared = apply_window(&normalize_frame(frame)?, window);
    if prepared.dim() != fft.shape() {
        return Err(Error::DimensionMismatch {
            context: "frame spectrum".into(),
            expected: format!("{:?}", fft.shape()),
            found: format!("{:?}", prepared.dim()),
        });
    }
    Ok(fft.forward_real(&prepared))
}

/// Correlates two preprocessed frames of equal shape.
pub fn correlate(a: &Frame, b: &Frame, method: CorrelationMethod, mask: &FourierMask) -> Result<CorrelationSurface> {
    if a.dim() != b.dim() || a.dim() != mask.shape() {
        return Err(Error::DimensionMismatch {
            context: "correlate".into(),
            expected: format!("{:?}", a.dim()),
            found: format!("{:?} and mask {:?}", b.dim(), mask.shape()),
        });
    }
    let fft = Fft2::new(a.nrows(), a.ncols());
    correlate_spectra(&fft.forward_real(a), &fft.forward_real(b), method, mask, &fft)
}

/// [`correlate`] on precomputed spectra.
pub fn correlate_spectra(
    fa: &Array2<Complex64>,
    fb: &Array2<Complex64>,
    method: CorrelationMethod,
    mask: &FourierMask,
    fft: &Fft2,
) -> Result<CorrelationSurface> {
    if fa.dim() != fb.dim() || fa.dim() != mask.shape() || fa.dim() != fft.shape() {
        return Err(Error::DimensionMismatch {
            context: "correlate".into(),
            expected: format!("{:?}", fa.dim()),
            found: format!("{:?}, mask {:?}", fb.dim(), mask.shape()),
        });
    }
    let mut product: Array2<Complex64> = Array2::from_shape_fn(fa.dim(), |idx| fa[idx].conj() * fb[idx]);
    if method != CorrelationMethod::Cross {
        let max_amp = product.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let eps = 1e-10 * max_amp;
        for v in product.iter_mut() {
            let amp = v.norm() + eps;
            let denom = match method {
                CorrelationMethod::Mutual => amp.sqrt(),
                _ => amp,
            };
            if denom > 0.0 {
                *v /= denom;
            }
        }
    }
    if mask.kind != MaskKind::None {
        product.zip_mut_with(&mask.weights, |v, &w| *v *= w);
    }
    fft.inverse(&mut product);

    let mut max_re = 0.0f64;
    let mut max_im = 0.0f64;
    for v in product.iter() {
        if !(v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::Numerical("non-finite correlation value".into()));
        }
        max_re = max_re.max(v.re.abs());
        max_im = max_im.max(v.im.abs());
    }
    if max_im > 1e-6 * max_re {
        return Err(Error::Numerical(format!(
            "imaginary residue {max_im:.3e} exceeds 1e-6 of the real maximum {max_re:.3e}"
        )));
    }
    Ok(CorrelationSurface {
        values: fftshift(&product.mapv(|v| v.re)),
    })
}

/// Frame-averaged power spectrum of normalized, Hann-windowed frames, centered.
pub fn mean_power_spectrum(stack: &ImageStack) -> Result<Array2<f64>> {
    let (h, w) = stack.shape();
    let fft = Fft2::new(h, w);
    let mut acc = Array2::<f64>::zeros((h, w));
    for frame in &stack.frames {
        let spec = frame_spectrum(frame, WindowKind::Hann, &fft)?;
        acc.zip_mut_with(&spec, |a, s| *a += s.norm_sqr());
    }
    acc /= stack.len() as f64;
    Ok(fftshift(&acc))
}

/// Finds up to two primitive reciprocal lattice vectors (cycles/px, `[kx, ky]`)
/// from the frame-averaged power spectrum.
///
/// Candidates are local maxima of the power spectrum on the upper half-plane,
/// outside a small DC exclusion disc, that stand well above the median power.
/// Of the brightest candidates the shortest vector is taken as the first basis
/// vector and the shortest one not collinear with it as the second, so that
/// bright higher-order reflections do not displace the primitive ones.
pub fn detect_reciprocal_basis(stack: &ImageStack) -> Result<Vec<[f64; 2]>> {
    const DC_EXCLUSION_BINS: f64 = 4.0;
    const FLOOR_FACTOR: f64 = 30.0;
    const BRIGHTEST: usize = 6;

    let power = mean_power_spectrum(stack)?;
    let (h, w) = power.dim();
    let (cy, cx) = (h / 2, w / 2);

    let mut sorted: Vec<f64> = power.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let floor = FLOOR_FACTOR * median;

    let mut candidates = Vec::new();
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let (dy, dx) = (r as isize - cy as isize, c as isize - cx as isize);
            if dy < 0 || (dy == 0 && dx <= 0) {
                continue;
            }
            if ((dx * dx + dy * dy) as f64).sqrt() < DC_EXCLUSION_BINS {
                continue;
            }
            let v = power[[r, c]];
            if v <= floor {
                continue;
            }
            let is_max = (-1..=1).all(|oy: isize| {
                (-1..=1).all(|ox: isize| {
                    (oy == 0 && ox == 0) || v > power[[(r as isize + oy) as usize, (c as isize + ox) as usize]]
                })
            });
            if is_max {
                candidates.push((v, r, c));
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::DetectionFailed(
            "no power-spectrum peak rises above the noise floor; supply the basis manually".into(),
        ));
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
    candidates.truncate(BRIGHTEST);

    // centroid refinement over the 3x3 neighborhood
    let refined: Vec<[f64; 2]> = candidates
        .iter()
        .map(|&(_, r, c)| {
            let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
            for oy in -1..=1isize {
                for ox in -1..=1isize {
                    let v = power[[(r as isize + oy) as usize, (c as isize + ox) as usize]];
                    sx += v * (c as f64 + ox as f64 - cx as f64);
                    sy += v * (r as f64 + oy as f64 - cy as f64);
                    sw += v;
                }
            }
            [sx / sw / w as f64, sy / sw / h as f64]
        })
        .collect();

    let norm = |b: &[f64; 2]| b[0].hypot(b[1]);
    let shortest = |items: &mut dyn Iterator<Item = [f64; 2]>| items.min_by(|a, b| norm(a).total_cmp(&norm(b)));
    let b1 = shortest(&mut refined.iter().copied()).expect("at least one candidate");
    let b2 = shortest(&mut refined.iter().copied().filter(|b| {
        let cos = (b[0] * b1[0] + b[1] * b1[1]).abs() / (norm(b) * norm(&b1));
        cos < 0.95
    }));
    Ok(match b2 {
        Some(b2) => vec![b1, b2],
        None => vec![b1],
    })
}
