//! All-pairs rigid registration for low signal-to-noise image stacks.
//!
//! Every frame pair of a stack is correlated in Fourier space, the resulting
//! relative shifts are collected in a skew-symmetric shift matrix, elements
//! that break additive transitivity are detected and repaired from paths of
//! trusted measurements, and the per-frame shifts are solved in closed form.
//! The registered frames are then averaged.
//!
//! The crate is organised along that pipeline:
//!
//! * [`stack_io`] loads and stores stacks (raw `f32` frames + JSON manifest).
//! * [`preprocess`] normalizes frames and handles the real-space boundary.
//! * [`spectral`] builds Fourier weighting masks and correlates frame pairs.
//! * [`peaks`] locates correlation maxima, optionally with subpixel fits.
//! * [`shiftmatrix`] owns the shift matrix, outlier handling and the solver.
//! * [`reconstruct`] shifts and averages frames and computes diagnostics.
//! * [`synth`] renders synthetic lattice stacks with known ground truth.
//! * [`pipeline`] strings the stages together.

pub mod error;
pub mod fft;
pub mod peaks;
pub mod pipeline;
pub mod preprocess;
pub mod reconstruct;
pub mod shiftmatrix;
pub mod spectral;
pub mod stack_io;
pub mod synth;

pub use error::{Error, Result};
pub use stack_io::{ImageStack, StackMetadata};

/// A single 2D frame, indexed `[row, column]` = `[y, x]`.
pub type Frame = ndarray::Array2<f64>;
