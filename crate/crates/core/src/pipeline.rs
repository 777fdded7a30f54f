//! End-to-end registration of a stack.

use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::peaks::PeakMethod;
use crate::preprocess::{windowed_shape, WindowKind};
use crate::reconstruct::{average_stack, estimate_snr, AverageImage};
use crate::shiftmatrix::{
    compute_shift_matrix, default_threshold, detect_outliers, drift_profile, exclude_bad_frames, optimal_shifts,
    repair_outliers, DriftProfile, OutlierMethod, PairSettings, ShiftMatrix, ShiftSolution,
};
use crate::spectral::{build_mask, detect_reciprocal_basis, CorrelationMethod, MaskSpec};
use crate::{Error, ImageStack, Result};

pub const SETTINGS_VERSION: u32 = 1;

fn default_version() -> u32 {
    SETTINGS_VERSION
}

/// Registration settings. Every field has a default, so `{}` is a complete
/// configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    #[serde(default = "default_version")]
    pub version: u32,
    pub window: WindowKind,
    pub method: CorrelationMethod,
    /// An anisotropic mask without a basis uses the detected basis and falls
    /// back to no mask when detection fails.
    pub mask: MaskSpec,
    pub peak: PeakMethod,
    pub outlier_method: OutlierMethod,
    /// Pixels; `None` selects [`default_threshold`] of the known basis.
    pub threshold: Option<f64>,
    pub row_outlier_fraction: f64,
    pub max_paths: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            version: SETTINGS_VERSION,
            window: WindowKind::default(),
            method: CorrelationMethod::default(),
            mask: MaskSpec::AnisotropicGaussian {
                axis_scale: 1.0,
                basis: None,
            },
            peak: PeakMethod::default(),
            outlier_method: OutlierMethod::default(),
            threshold: None,
            row_outlier_fraction: 0.5,
            max_paths: 5,
        }
    }
}

impl Settings {
    pub fn validate(&self) -> Result<()> {
        if self.version != SETTINGS_VERSION {
            return Err(Error::InvalidParameter(format!(
                "settings version {} is not supported (expected {SETTINGS_VERSION})",
                self.version
            )));
        }
        if let Some(t) = self.threshold {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::InvalidParameter(format!("threshold must be > 0, got {t}")));
            }
        }
        if !(self.row_outlier_fraction > 0.0 && self.row_outlier_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "row_outlier_fraction must be in (0, 1], got {}",
                self.row_outlier_fraction
            )));
        }
        if self.max_paths == 0 {
            return Err(Error::InvalidParameter("max_paths must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrEstimates {
    /// Per included frame.
    pub frames: Vec<f64>,
    pub frame_median: f64,
    /// On the region every included frame covers.
    pub average: f64,
}

/// Everything a registration run produces.
#[derive(Debug, Clone)]
pub struct Registration {
    /// Settings with the mask and threshold resolved.
    pub settings: Settings,
    pub basis: Vec<[f64; 2]>,
    pub threshold: f64,
    pub warnings: Vec<String>,
    /// As measured; validity reflects failed correlations only.
    pub measured: ShiftMatrix,
    /// Outlier mask of the full measured matrix.
    pub detected: Array2<bool>,
    pub excluded: Vec<usize>,
    /// Full-size matrix with the included block repaired.
    pub repaired: ShiftMatrix,
    /// Pairs `(i, j)`, `i < j`, flagged on the included frames and replaced.
    pub repaired_pairs: Vec<(usize, usize)>,
    /// Included pairs still failing the transitivity check after repair.
    pub unrepaired: Vec<(usize, usize)>,
    pub fit_fallbacks: Vec<(usize, usize)>,
    pub failed_pairs: Vec<(usize, usize)>,
    pub solution: ShiftSolution,
    pub drift: DriftProfile,
    pub average: AverageImage,
    pub snr: SnrEstimates,
    pub timing: Vec<StageTime>,
}

struct Clock {
    start: Instant,
    times: Vec<StageTime>,
}

impl Clock {
    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.times.push(StageTime {
            stage: stage.into(),
            seconds: (now - self.start).as_secs_f64(),
        });
        self.start = now;
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Registers and averages `stack`.
///
/// Unrepairable elements are fatal. Elements that were repaired but still
/// break transitivity are reported in [`Registration::unrepaired`].
pub fn register(stack: &ImageStack, settings: &Settings) -> Result<Registration> {
    settings.validate()?;
    let n = stack.len();
    if n < 2 {
        return Err(Error::TooFewFrames(n));
    }
    let mut clock = Clock {
        start: Instant::now(),
        times: Vec::new(),
    };
    let mut warnings = Vec::new();
    let mut resolved = settings.clone();

    let mut basis: Vec<[f64; 2]> = Vec::new();
    if let MaskSpec::AnisotropicGaussian { axis_scale, basis: given } = &settings.mask {
        match given {
            Some(b) => basis = b.clone(),
            None => match detect_reciprocal_basis(stack) {
                Ok(b) => {
                    basis = b.clone();
                    resolved.mask = MaskSpec::AnisotropicGaussian {
                        axis_scale: *axis_scale,
                        basis: Some(b),
                    };
                }
                Err(e) => {
                    warnings.push(format!("{e}; correlating without a mask"));
                    resolved.mask = MaskSpec::None;
                }
            },
        }
    }
    let shape = windowed_shape(stack.shape(), settings.window);
    let mask = build_mask(&resolved.mask, shape, (!basis.is_empty()).then_some(basis.as_slice()))?;
    let threshold = settings
        .threshold
        .unwrap_or_else(|| default_threshold((!basis.is_empty()).then_some(basis.as_slice())));
    resolved.threshold = Some(threshold);
    clock.lap("mask");

    let pair = PairSettings {
        window: settings.window,
        method: settings.method,
        mask,
        peak: settings.peak,
    };
    let measurement = compute_shift_matrix(stack, &pair)?;
    let measured = measurement.matrix;
    clock.lap("correlate");

    let detected = detect_outliers(&measured, settings.outlier_method, threshold, settings.max_paths)?;

    // Frames are excluded one at a time, worst row first, and detection is
    // repeated without them: a bad frame spoils the paths and neighbourhoods
    // of the elements around it.
    let mut included: Vec<usize> = (0..n).collect();
    let mut excluded = Vec::new();
    let mut sub = measured.clone();
    sub.valid = detected.clone();
    loop {
        let over = exclude_bad_frames(&sub.valid, settings.row_outlier_fraction)?;
        let worst = over
            .iter()
            .copied()
            .max_by_key(|&a| (sub.valid.row(a).iter().filter(|&&v| !v).count(), std::cmp::Reverse(a)));
        let Some(worst) = worst else { break };
        excluded.push(included.remove(worst));
        sub = measured.submatrix(&included);
        sub.valid = detect_outliers(&sub, settings.outlier_method, threshold, settings.max_paths)?;
    }
    excluded.sort_unstable();
    let repaired_pairs: Vec<(usize, usize)> =
        sub.invalid_pairs().into_iter().map(|(a, b)| (included[a], included[b])).collect();
    clock.lap("detect");

    let fixed = repair_outliers(&sub, settings.max_paths).map_err(|e| match e {
        Error::Unrepairable { pairs } => Error::Unrepairable {
            pairs: pairs.into_iter().map(|(a, b)| (included[a], included[b])).collect(),
        },
        other => other,
    })?;
    let check = detect_outliers(&fixed, OutlierMethod::Transitivity, threshold, settings.max_paths)?;
    let mut unrepaired = Vec::new();
    for a in 0..included.len() {
        for b in a + 1..included.len() {
            if !check[[a, b]] {
                unrepaired.push((included[a], included[b]));
            }
        }
    }
    let mut repaired = measured.clone();
    repaired.valid = detected.clone();
    for (a, &i) in included.iter().enumerate() {
        for (b, &j) in included.iter().enumerate() {
            repaired.x[[i, j]] = fixed.x[[a, b]];
            repaired.y[[i, j]] = fixed.y[[a, b]];
            repaired.valid[[i, j]] = true;
        }
    }
    clock.lap("repair");

    let solution = optimal_shifts(&repaired, &excluded)?;
    let drift = drift_profile(&solution, &stack.metadata);
    clock.lap("solve");

    let average = average_stack(stack, &solution)?;
    clock.lap("average");

    let frame_snr: Vec<f64> = included
        .par_iter()
        .map(|&i| estimate_snr(&stack.frames[i], None).unwrap_or(f64::NAN))
        .collect();
    let region = average.full_coverage();
    let average_snr = if region.iter().any(|&v| v) {
        estimate_snr(&average.image, Some(&region))
    } else {
        estimate_snr(&average.image, Some(&average.valid()))
    }
    .unwrap_or(f64::NAN);
    let snr = SnrEstimates {
        frame_median: median(frame_snr.iter().copied().filter(|v| v.is_finite()).collect()),
        frames: frame_snr,
        average: average_snr,
    };
    clock.lap("snr");

    Ok(Registration {
        settings: resolved,
        basis,
        threshold,
        warnings,
        measured,
        detected,
        excluded,
        repaired,
        repaired_pairs,
        unrepaired,
        fit_fallbacks: measurement.fit_fallbacks,
        failed_pairs: measurement.failed_pairs,
        solution,
        drift,
        average,
        snr,
        timing: clock.times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_stack, preset, DriftModel};

    #[test]
    fn empty_config_is_default() {
        let s: Settings = serde_json::from_str("{}").unwrap();
        assert_eq!(s, Settings::default());
        assert!(serde_json::from_str::<Settings>(r#"{"bogus": 1}"#).is_err());
        let round: Settings = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(round, s);
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let bad = [
            Settings { version: 99, ..Settings::default() },
            Settings { threshold: Some(0.0), ..Settings::default() },
            Settings { row_outlier_fraction: 0.0, ..Settings::default() },
            Settings { max_paths: 0, ..Settings::default() },
        ];
        for s in bad {
            assert!(s.validate().is_err());
        }
    }

    #[test]
    fn recovers_synthetic_drift() {
        let mut p = preset("paper-like-40").unwrap();
        p.height = 128;
        p.width = 128;
        p.frame_count = 8;
        p.dose = None;
        p.lattice = [[8.0, 0.0], [0.0, 8.0]];
        for atom in &mut p.atoms {
            atom.width = 1.2;
        }
        p.drift = DriftModel::RandomWalk { step_sigma: 1.5 };
        let (stack, truth) = generate_stack(&p).unwrap();
        let reg = register(&stack, &Settings::default()).unwrap();
        assert_eq!(reg.basis.len(), 2);
        assert_eq!(reg.threshold, 2.0);
        assert!(reg.excluded.is_empty());
        assert!(reg.unrepaired.is_empty());
        let expected = truth.centred_positions(&[]);
        for (r, t) in reg.solution.shifts.iter().zip(&expected) {
            assert!((r[0] - t[0]).abs() < 0.05 && (r[1] - t[1]).abs() < 0.05, "{r:?} vs {t:?}");
        }
        assert!(reg.repaired.is_skew_symmetric());
        let stages: Vec<&str> = reg.timing.iter().map(|t| t.stage.as_str()).collect();
        assert_eq!(stages, ["mask", "correlate", "detect", "repair", "solve", "average", "snr"]);
    }

    #[test]
    fn falls_back_without_structure() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let base = Array2::from_shape_fn((48, 48), |_| normal.sample(&mut rng));
        let stack = ImageStack::new(vec![base.clone(); 3], 1.0, None).unwrap();
        let reg = register(&stack, &Settings::default()).unwrap();
        assert_eq!(reg.settings.mask, MaskSpec::None);
        assert_eq!(reg.warnings.len(), 1);
        assert!(reg.solution.shifts.iter().all(|s| s[0].abs() < 1e-6 && s[1].abs() < 1e-6));
        assert!(reg.drift.max_speed() < 1e-6);
    }
}
