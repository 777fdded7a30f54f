use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: String,
        found: String,
    },

    #[error("non-finite pixel in frame {frame} at (row {row}, col {col})")]
    NonFinite { frame: usize, row: usize, col: usize },

    #[error("a stack needs at least 2 frames, found {0}")]
    TooFewFrames(usize),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("reciprocal basis detection failed: {0}")]
    DetectionFailed(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("shift ({x:.3}, {y:.3}) exceeds the sanity bound of {bound:.1} px")]
    ShiftOutOfBounds { x: f64, y: f64, bound: f64 },

    #[error("drift of {excursion:.2} px exceeds the scene margin of {margin} px")]
    DriftExceedsMargin { excursion: f64, margin: usize },

    #[error("registration failed: every frame was excluded")]
    AllFramesExcluded,

    #[error("{} shift matrix element(s) could not be repaired: {pairs:?}", pairs.len())]
    Unrepairable { pairs: Vec<(usize, usize)> },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MissingFile(_) => "missing_file",
            Error::Manifest(_) => "manifest",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::TooFewFrames(_) => "too_few_frames",
            Error::Degenerate(_) => "degenerate",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::DetectionFailed(_) => "detection_failed",
            Error::Numerical(_) => "numerical",
            Error::ShiftOutOfBounds { .. } => "shift_out_of_bounds",
            Error::DriftExceedsMargin { .. } => "drift_exceeds_margin",
            Error::AllFramesExcluded => "all_frames_excluded",
            Error::Unrepairable { .. } => "unrepairable",
        }
    }
}
