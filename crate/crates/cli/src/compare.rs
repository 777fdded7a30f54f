//! Agreement between two sets of frame positions (reports or ground truth).

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use stemreg::synth::{SynthTruth, TRUTH_FORMAT};

use crate::report::{Report, REPORT_FORMAT};

pub const COMPARE_FORMAT: &str = "stemreg-compare";

/// Positions recovered by a registration or known from synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct Positions {
    pub positions: Vec<[f64; 2]>,
    /// Excluded (report) or corrupted (truth) frames.
    pub flagged: Vec<usize>,
    /// Shortest lattice-plane spacing in pixels, when known.
    pub spacing: Option<f64>,
}

impl Positions {
    pub fn from_truth(t: &SynthTruth) -> Self {
        Self {
            positions: t.positions.clone(),
            flagged: t.corrupted_frames.clone(),
            spacing: Some(t.shortest_spacing()),
        }
    }

    pub fn from_report(r: &Report) -> Self {
        let spacing = r
            .basis
            .iter()
            .map(|b| 1.0 / b[0].hypot(b[1]))
            .filter(|s| s.is_finite())
            .reduce(f64::min);
        Self {
            positions: r.shifts.clone(),
            flagged: r.excluded_frames.clone(),
            spacing,
        }
    }

    /// Reads a report or truth file, told apart by its `format` field.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(REPORT_FORMAT) => Ok(Self::from_report(
                &serde_json::from_value(value).with_context(|| format!("reading report {}", path.display()))?,
            )),
            Some(TRUTH_FORMAT) => Ok(Self::from_truth(
                &serde_json::from_value(value).with_context(|| format!("reading truth {}", path.display()))?,
            )),
            other => bail!(
                "{}: expected format \"{REPORT_FORMAT}\" or \"{TRUTH_FORMAT}\", got {other:?}",
                path.display()
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedAgreement {
    pub matching: bool,
    /// Frames flagged on one side only.
    pub symmetric_difference: Vec<usize>,
}

/// Metrics that do not depend on the order of the two inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub format: String,
    /// Frames flagged on neither side.
    pub frames_compared: usize,
    /// Pixels, after removing each side's mean over the compared frames.
    pub rms_error: f64,
    pub max_error: f64,
    /// Half the shortest lattice spacing; `None` when no lattice is known.
    pub jump_threshold: Option<f64>,
    pub unit_cell_jumps: usize,
    pub jump_frames: Vec<usize>,
    pub flagged_frames: FlaggedAgreement,
}

pub fn compare(a: &Positions, b: &Positions) -> anyhow::Result<Metrics> {
    if a.positions.len() != b.positions.len() {
        bail!("frame counts differ: {} vs {}", a.positions.len(), b.positions.len());
    }
    let fa: BTreeSet<usize> = a.flagged.iter().copied().collect();
    let fb: BTreeSet<usize> = b.flagged.iter().copied().collect();
    let frames: Vec<usize> = (0..a.positions.len()).filter(|i| !fa.contains(i) && !fb.contains(i)).collect();
    if frames.is_empty() {
        bail!("no frame is unflagged on both sides");
    }
    let mean = |p: &[[f64; 2]]| {
        let n = frames.len() as f64;
        [
            frames.iter().map(|&i| p[i][0]).sum::<f64>() / n,
            frames.iter().map(|&i| p[i][1]).sum::<f64>() / n,
        ]
    };
    let (ma, mb) = (mean(&a.positions), mean(&b.positions));
    let errors: Vec<(usize, f64)> = frames
        .iter()
        .map(|&i| {
            let dx = (a.positions[i][0] - ma[0]) - (b.positions[i][0] - mb[0]);
            let dy = (a.positions[i][1] - ma[1]) - (b.positions[i][1] - mb[1]);
            (i, dx.hypot(dy))
        })
        .collect();
    let rms_error = (errors.iter().map(|(_, e)| e * e).sum::<f64>() / errors.len() as f64).sqrt();
    let max_error = errors.iter().map(|&(_, e)| e).fold(0.0, f64::max);
    let jump_threshold = [a.spacing, b.spacing].into_iter().flatten().reduce(f64::min).map(|s| 0.5 * s);
    let jump_frames: Vec<usize> = match jump_threshold {
        Some(t) => errors.iter().filter(|(_, e)| *e > t).map(|&(i, _)| i).collect(),
        None => Vec::new(),
    };
    Ok(Metrics {
        format: COMPARE_FORMAT.into(),
        frames_compared: frames.len(),
        rms_error,
        max_error,
        jump_threshold,
        unit_cell_jumps: jump_frames.len(),
        jump_frames,
        flagged_frames: FlaggedAgreement {
            matching: fa == fb,
            symmetric_difference: fa.symmetric_difference(&fb).copied().collect(),
        },
    })
}
