//! The `report.json` document written by `register`.

use std::path::PathBuf;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use stemreg::pipeline::{Registration, Settings, StageTime};
use stemreg::shiftmatrix::{DriftProfile, ShiftMatrix};
use stemreg::StackMetadata;

use crate::compare::Metrics;

pub const REPORT_FORMAT: &str = "stemreg-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    UnrepairedOutliers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixPair {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

impl MatrixPair {
    fn new(m: &ShiftMatrix) -> Self {
        Self {
            x: rows(&m.x),
            y: rows(&m.y),
        }
    }
}

fn rows<T: Clone>(a: &Array2<T>) -> Vec<Vec<T>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftMatrices {
    pub measured: MatrixPair,
    pub repaired: MatrixPair,
    /// Outlier mask of the measured matrix (`true` = trusted).
    pub validity: Vec<Vec<bool>>,
    pub failed_pairs: Vec<(usize, usize)>,
    pub fit_fallbacks: Vec<(usize, usize)>,
    pub repaired_pairs: Vec<(usize, usize)>,
    pub unrepaired_outliers: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    #[serde(flatten)]
    pub profile: DriftProfile,
    pub max_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snr {
    pub frames: Vec<Option<f64>>,
    pub frame_median: Option<f64>,
    pub average: Option<f64>,
    /// `average / frame_median / sqrt(N')`.
    pub gain_over_sqrt_n: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub average_raw: PathBuf,
    pub average_pgm: PathBuf,
    pub coverage_pgm: PathBuf,
    pub power_spectrum_frame_pgm: PathBuf,
    pub power_spectrum_average_pgm: PathBuf,
    pub shift_x_measured_pgm: PathBuf,
    pub shift_y_measured_pgm: PathBuf,
    pub shift_x_repaired_pgm: PathBuf,
    pub shift_y_repaired_pgm: PathBuf,
    pub validity_pgm: PathBuf,
}

impl Default for Artifacts {
    fn default() -> Self {
        Self {
            average_raw: "average.f32".into(),
            average_pgm: "average.pgm".into(),
            coverage_pgm: "coverage.pgm".into(),
            power_spectrum_frame_pgm: "power_spectrum_frame.pgm".into(),
            power_spectrum_average_pgm: "power_spectrum_average.pgm".into(),
            shift_x_measured_pgm: "shift_x_measured.pgm".into(),
            shift_y_measured_pgm: "shift_y_measured.pgm".into(),
            shift_x_repaired_pgm: "shift_x_repaired.pgm".into(),
            shift_y_repaired_pgm: "shift_y_repaired.pgm".into(),
            validity_pgm: "validity.pgm".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stages: Vec<StageTime>,
    pub total_seconds: f64,
}

/// Everything needed to judge a registration. `timing` is the only field
/// that differs between identical runs and is written last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub version: u32,
    pub status: Status,
    pub input: PathBuf,
    pub stack: StackMetadata,
    /// Settings as run, with the mask basis and threshold filled in.
    pub settings: Settings,
    pub basis: Vec<[f64; 2]>,
    pub threshold: f64,
    pub warnings: Vec<String>,
    pub shift_matrices: ShiftMatrices,
    pub excluded_frames: Vec<usize>,
    /// Per-frame positions in pixels, mean-centred over included frames.
    pub shifts: Vec<[f64; 2]>,
    pub drift: Drift,
    pub snr: Snr,
    pub artifacts: Artifacts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Metrics>,
    pub timing: Timing,
}

impl Report {
    pub fn new(input: PathBuf, metadata: &StackMetadata, reg: &Registration, total_seconds: f64) -> Self {
        let status = if reg.unrepaired.is_empty() { Status::Ok } else { Status::UnrepairedOutliers };
        let frame_median = finite(reg.snr.frame_median);
        let average = finite(reg.snr.average);
        let n = reg.solution.included().len() as f64;
        Self {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            status,
            input,
            stack: metadata.clone(),
            settings: reg.settings.clone(),
            basis: reg.basis.clone(),
            threshold: reg.threshold,
            warnings: reg.warnings.clone(),
            shift_matrices: ShiftMatrices {
                measured: MatrixPair::new(&reg.measured),
                repaired: MatrixPair::new(&reg.repaired),
                validity: rows(&reg.detected),
                failed_pairs: reg.failed_pairs.clone(),
                fit_fallbacks: reg.fit_fallbacks.clone(),
                repaired_pairs: reg.repaired_pairs.clone(),
                unrepaired_outliers: reg.unrepaired.clone(),
            },
            excluded_frames: reg.excluded.clone(),
            shifts: reg.solution.shifts.clone(),
            drift: Drift {
                profile: reg.drift.clone(),
                max_speed: reg.drift.max_speed(),
            },
            snr: Snr {
                frames: reg.snr.frames.iter().map(|&v| finite(v)).collect(),
                frame_median,
                average,
                gain_over_sqrt_n: match (frame_median, average) {
                    (Some(f), Some(a)) if f > 0.0 => finite(a / f / n.sqrt()),
                    _ => None,
                },
            },
            artifacts: Artifacts::default(),
            comparison: None,
            timing: Timing {
                stages: reg.timing.clone(),
                total_seconds,
            },
        }
    }
}
