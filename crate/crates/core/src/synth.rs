//! Synthetic acquisition series with known ground truth.
//!
//! A two-dimensional crystal is rendered once onto a periodic canvas larger
//! than the frame, with 4x supersampling and box downsampling. Each frame is
//! the canvas translated by that frame's stage position (Fourier shift),
//! cropped, scaled to the dose and given Poisson noise.
//!
//! Random streams are derived from the seed with ChaCha8 stream ids so that
//! frames can be rendered in parallel and still match a serial run:
//! stream 0 draws the scene disorder, stream 1 the drift, stream 2 the burst
//! offsets and stream `1000 + i` the noise of frame `i`.

use std::f64::consts::PI;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::fft::Fft2;
use crate::reconstruct::apply_shift_ramp;
use crate::shiftmatrix::ShiftMatrix;
use crate::{Error, Frame, ImageStack, Result};

pub const SUPERSAMPLE: usize = 4;
pub const ENVELOPE_MODES: usize = 8;
pub const ENVELOPE_PERIODS: (f64, f64) = (20.0, 80.0);
/// Canvas pixels kept clear of the wrap-around seam beyond the largest
/// excursion.
const SEAM_GUARD: f64 = 4.0;

const SCENE_STREAM: u64 = 0;
const DRIFT_STREAM: u64 = 1;
const BURST_STREAM: u64 = 2;
const NOISE_STREAM_BASE: u64 = 1000;

/// One atom of the unit cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    /// Fractional coordinates in the lattice basis.
    pub position: [f64; 2],
    /// Gaussian standard deviation in pixels.
    pub width: f64,
    pub brightness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PldCharacter {
    /// Displacements along the wavevector.
    Longitudinal,
    /// Displacements perpendicular to the wavevector.
    Transverse,
}

/// Periodic lattice displacement `u(r) = amplitude * e * sin(2 pi q.r + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pld {
    /// Pixels.
    pub amplitude: f64,
    /// Cycles per pixel; snapped to the nearest wavevector periodic on the
    /// canvas.
    pub wavevector: [f64; 2],
    pub character: PldCharacter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSegment {
    pub frames: usize,
    /// Pixels per frame.
    pub velocity: [f64; 2],
}

/// Stage trajectory. Generated trajectories are shifted to zero mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriftModel {
    None,
    /// Gaussian steps with standard deviation `step_sigma` px per axis.
    RandomWalk { step_sigma: f64 },
    /// `velocity` px per frame.
    ConstantVelocity { velocity: [f64; 2] },
    /// Constant-velocity segments; the last one continues to the end.
    Piecewise { segments: Vec<DriftSegment> },
    /// Positions given frame by frame.
    Explicit { positions: Vec<[f64; 2]> },
}

/// Distortion applied to corrupted frames: the frame is cut into blocks of
/// rows and each block is taken from a position offset by a random vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Burst {
    pub block_rows: usize,
    /// Offset magnitude range in pixels.
    pub min_offset: f64,
    pub max_offset: f64,
}

impl Default for Burst {
    fn default() -> Self {
        Self {
            block_rows: 32,
            min_offset: 3.0,
            max_offset: 6.0,
        }
    }
}

fn default_background() -> f64 {
    0.1
}

fn default_frame_time() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub height: usize,
    pub width: usize,
    /// Canvas border around the frame; bounds the drift excursion.
    pub margin: usize,
    pub frame_count: usize,
    #[serde(default = "default_frame_time")]
    pub frame_time: f64,
    #[serde(default)]
    pub pixel_size: Option<f64>,
    /// Real-space lattice vectors in pixels.
    pub lattice: [[f64; 2]; 2],
    pub atoms: Vec<Atom>,
    /// Relative standard deviation of per-site brightness.
    #[serde(default)]
    pub site_disorder: f64,
    /// Relative standard deviation of a smooth random brightness envelope
    /// built from [`ENVELOPE_MODES`] plane waves with periods between
    /// [`ENVELOPE_PERIODS`] pixels.
    #[serde(default)]
    pub envelope: f64,
    #[serde(default)]
    pub pld: Option<Pld>,
    pub drift: DriftModel,
    /// Expected counts at the brightest pixel; `None` renders noiseless
    /// intensities in `[background, 1]`.
    pub dose: Option<f64>,
    /// Floor as a fraction of the peak intensity.
    #[serde(default = "default_background")]
    pub background: f64,
    #[serde(default)]
    pub corrupt_frames: Vec<usize>,
    #[serde(default)]
    pub burst: Burst,
    pub seed: u64,
}

/// PLD as rendered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PldTruth {
    pub amplitude: f64,
    pub wavevector: [f64; 2],
    pub phase: f64,
    pub character: PldCharacter,
}

/// Ground truth for a generated stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub format: String,
    /// Content translation of each frame in pixels, `frame_i(x) = scene(x - p_i)`.
    pub positions: Vec<[f64; 2]>,
    pub lattice: [[f64; 2]; 2],
    /// Cycles per pixel, dual to `lattice`.
    pub reciprocal_basis: [[f64; 2]; 2],
    pub pld: Option<PldTruth>,
    pub corrupted_frames: Vec<usize>,
    pub frame_time: f64,
    pub pixel_size: Option<f64>,
}

pub const TRUTH_FORMAT: &str = "stemreg-truth";

impl SynthTruth {
    pub fn shift_matrix(&self) -> ShiftMatrix {
        ShiftMatrix::from_positions(&self.positions)
    }

    /// Positions minus their mean over `frames` (all frames when empty).
    pub fn centred_positions(&self, frames: &[usize]) -> Vec<[f64; 2]> {
        let idx: Vec<usize> = if frames.is_empty() { (0..self.positions.len()).collect() } else { frames.to_vec() };
        let n = idx.len() as f64;
        let mx = idx.iter().map(|&i| self.positions[i][0]).sum::<f64>() / n;
        let my = idx.iter().map(|&i| self.positions[i][1]).sum::<f64>() / n;
        self.positions.iter().map(|p| [p[0] - mx, p[1] - my]).collect()
    }

    /// Shortest lattice-plane spacing in pixels.
    pub fn shortest_spacing(&self) -> f64 {
        self.reciprocal_basis
            .iter()
            .map(|b| 1.0 / b[0].hypot(b[1]))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn reciprocal_basis(lattice: &[[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let [a1, a2] = lattice;
    let det = a1[0] * a2[1] - a1[1] * a2[0];
    if det.abs() < 1e-12 {
        return None;
    }
    Some([[a2[1] / det, -a2[0] / det], [-a1[1] / det, a1[0] / det]])
}

impl SynthParams {
    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad: Vec<String> = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                bad.push(msg);
            }
        };
        check(self.height >= 8, format!("height: must be >= 8, got {}", self.height));
        check(self.width >= 8, format!("width: must be >= 8, got {}", self.width));
        check(self.frame_count >= 1, "frame_count: must be >= 1".into());
        check(
            self.frame_time.is_finite() && self.frame_time > 0.0,
            format!("frame_time: must be > 0, got {}", self.frame_time),
        );
        if let Some(p) = self.pixel_size {
            check(p.is_finite() && p > 0.0, format!("pixel_size: must be > 0, got {p}"));
        }
        check(reciprocal_basis(&self.lattice).is_some(), "lattice: vectors are collinear".into());
        check(
            self.lattice.iter().flatten().all(|v| v.is_finite()),
            "lattice: non-finite component".into(),
        );
        check(!self.atoms.is_empty(), "atoms: at least one atom is required".into());
        for (i, a) in self.atoms.iter().enumerate() {
            check(a.width.is_finite() && a.width > 0.0, format!("atoms[{i}].width: must be > 0, got {}", a.width));
            check(
                a.brightness.is_finite() && a.brightness > 0.0,
                format!("atoms[{i}].brightness: must be > 0, got {}", a.brightness),
            );
        }
        check(
            self.site_disorder.is_finite() && (0.0..0.5).contains(&self.site_disorder),
            format!("site_disorder: must be in [0, 0.5), got {}", self.site_disorder),
        );
        check(
            self.envelope.is_finite() && (0.0..1.0).contains(&self.envelope),
            format!("envelope: must be in [0, 1), got {}", self.envelope),
        );
        if let Some(pld) = &self.pld {
            check(
                pld.amplitude.is_finite() && pld.amplitude >= 0.0,
                format!("pld.amplitude: must be >= 0, got {}", pld.amplitude),
            );
            check(
                pld.wavevector.iter().all(|k| k.is_finite() && k.abs() <= 0.5),
                "pld.wavevector: components must lie in [-0.5, 0.5]".into(),
            );
        }
        match &self.drift {
            DriftModel::RandomWalk { step_sigma } => check(
                step_sigma.is_finite() && *step_sigma >= 0.0,
                format!("drift.step_sigma: must be >= 0, got {step_sigma}"),
            ),
            DriftModel::Piecewise { segments } => check(!segments.is_empty(), "drift.segments: empty".into()),
            DriftModel::Explicit { positions } => check(
                positions.len() == self.frame_count,
                format!("drift.positions: expected {} entries, got {}", self.frame_count, positions.len()),
            ),
            _ => {}
        }
        if let Some(d) = self.dose {
            check(d.is_finite() && d > 0.0, format!("dose: must be > 0, got {d}"));
        }
        check(
            self.background.is_finite() && self.background > 0.0 && self.background < 1.0,
            format!("background: must be in (0, 1), got {}", self.background),
        );
        for &f in &self.corrupt_frames {
            check(f < self.frame_count, format!("corrupt_frames: index {f} out of range"));
        }
        check(self.burst.block_rows >= 1, "burst.block_rows: must be >= 1".into());
        check(
            self.burst.min_offset >= 0.0 && self.burst.max_offset >= self.burst.min_offset,
            "burst: need 0 <= min_offset <= max_offset".into(),
        );
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid synthesis parameters: {}", bad.join("; "))))
        }
    }

    pub fn canvas_shape(&self) -> (usize, usize) {
        (self.height + 2 * self.margin, self.width + 2 * self.margin)
    }
}

pub const PRESETS: [&str; 3] = ["paper-like-40", "nb3cl8-like-27", "ambiguous"];

/// Named parameter sets.
///
/// * `paper-like-40`: 40 frames of 256x256 px of a square two-sublattice
///   crystal (period 40 px, A/B brightness ratio 3) with a weak transverse
///   displacement wave, random-walk drift and a dose giving a single-frame
///   SNR near 1.5.
/// * `nb3cl8-like-27`: 27 frames of a hexagonal lattice of atom trimers
///   with a slower walk.
/// * `ambiguous`: sharp sites on a 5.5 px lattice, low dose and steps with
///   half-pixel fractional parts, so correlation peaks fall between pixels
///   while neighbouring lattice peaks fall on them.
pub fn preset(name: &str) -> Option<SynthParams> {
    match name {
        "paper-like-40" => Some(SynthParams {
            height: 256,
            width: 256,
            margin: 40,
            frame_count: 40,
            frame_time: 0.63,
            pixel_size: Some(0.1),
            lattice: [[40.0, 0.0], [0.0, 40.0]],
            atoms: vec![
                Atom { position: [0.0, 0.0], width: 6.0, brightness: 1.0 },
                Atom { position: [0.5, 0.5], width: 6.0, brightness: 1.0 / 3.0 },
            ],
            site_disorder: 0.05,
            envelope: 0.15,
            pld: Some(Pld {
                amplitude: 0.1,
                wavevector: [1.0 / 120.0, 0.0],
                character: PldCharacter::Transverse,
            }),
            drift: DriftModel::RandomWalk { step_sigma: 1.5 },
            dose: Some(PAPER_LIKE_DOSE),
            background: 0.1,
            corrupt_frames: vec![],
            burst: Burst::default(),
            seed: 1,
        }),
        "nb3cl8-like-27" => {
            let lattice = [[32.0, 0.0], [16.0, 16.0 * 3f64.sqrt()]];
            let recip = reciprocal_basis(&lattice).expect("non-degenerate lattice");
            let centre = [16.0, 16.0 / 3f64.sqrt()];
            let trimer = (0..3)
                .map(|k| {
                    let t = 2.0 * PI * k as f64 / 3.0 + PI / 2.0;
                    let (x, y) = (centre[0] + 5.0 * t.cos(), centre[1] + 5.0 * t.sin());
                    Atom {
                        position: [x * recip[0][0] + y * recip[0][1], x * recip[1][0] + y * recip[1][1]],
                        width: 3.0,
                        brightness: 1.0,
                    }
                })
                .collect();
            Some(SynthParams {
                height: 256,
                width: 256,
                margin: 32,
                frame_count: 27,
                frame_time: 0.58,
                pixel_size: Some(0.2),
                lattice,
                atoms: trimer,
                site_disorder: 0.05,
                envelope: 0.15,
                pld: None,
                drift: DriftModel::RandomWalk { step_sigma: 1.0 },
                dose: Some(PAPER_LIKE_DOSE),
                background: 0.1,
                corrupt_frames: vec![],
                burst: Burst::default(),
                seed: 1,
            })
        }
        "ambiguous" => {
            let base = SynthParams {
                height: 128,
                width: 128,
                margin: 24,
                frame_count: 16,
                frame_time: 1.0,
                pixel_size: None,
                lattice: [[5.5, 0.0], [0.0, 5.5]],
                atoms: vec![Atom { position: [0.0, 0.0], width: 1.0, brightness: 1.0 }],
                site_disorder: 0.05,
                envelope: 0.5,
                pld: None,
                drift: DriftModel::None,
                dose: Some(AMBIGUOUS_DOSE),
                background: 0.1,
                corrupt_frames: vec![],
                burst: Burst::default(),
                seed: 1,
            };
            Some(inject_unit_cell_ambiguity(&base))
        }
        _ => None,
    }
}

/// Peak counts per frame for `paper-like-40`, chosen for a single-frame
/// SNR near 1.5.
pub const PAPER_LIKE_DOSE: f64 = 28.0;
pub const AMBIGUOUS_DOSE: f64 = 10.0;

/// Replaces the drift with steps whose fractional parts are one half in both
/// axes, so every consecutive-frame shift puts the true correlation peak
/// between four pixels. The integer parts are drawn from the seed.
pub fn inject_unit_cell_ambiguity(params: &SynthParams) -> SynthParams {
    let mut rng = stream(params.seed, DRIFT_STREAM);
    let mut p = [0.0, 0.0];
    let mut positions = Vec::with_capacity(params.frame_count);
    for i in 0..params.frame_count {
        if i > 0 {
            let step = |rng: &mut ChaCha8Rng| rng.random_range(-2i32..=1) as f64 + 0.5;
            p = [p[0] + step(&mut rng), p[1] + step(&mut rng)];
        }
        positions.push(p);
    }
    let mut out = params.clone();
    out.drift = DriftModel::Explicit { positions };
    out
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn trajectory(params: &SynthParams) -> Vec<[f64; 2]> {
    let n = params.frame_count;
    let raw: Vec<[f64; 2]> = match &params.drift {
        DriftModel::None => vec![[0.0, 0.0]; n],
        DriftModel::RandomWalk { step_sigma } => {
            let mut rng = stream(params.seed, DRIFT_STREAM);
            let mut p = [0.0, 0.0];
            (0..n)
                .map(|i| {
                    if i > 0 && *step_sigma > 0.0 {
                        let d = Normal::new(0.0, *step_sigma).unwrap();
                        p = [p[0] + d.sample(&mut rng), p[1] + d.sample(&mut rng)];
                    }
                    p
                })
                .collect()
        }
        DriftModel::ConstantVelocity { velocity } => {
            (0..n).map(|i| [velocity[0] * i as f64, velocity[1] * i as f64]).collect()
        }
        DriftModel::Piecewise { segments } => {
            let mut p = [0.0, 0.0];
            let mut out = vec![p];
            let mut seg = 0;
            let mut used = 0;
            for _ in 1..n {
                while seg + 1 < segments.len() && used >= segments[seg].frames {
                    seg += 1;
                    used = 0;
                }
                let v = segments[seg].velocity;
                p = [p[0] + v[0], p[1] + v[1]];
                used += 1;
                out.push(p);
            }
            out
        }
        DriftModel::Explicit { positions } => return positions.clone(),
    };
    let mean = [
        raw.iter().map(|p| p[0]).sum::<f64>() / n as f64,
        raw.iter().map(|p| p[1]).sum::<f64>() / n as f64,
    ];
    raw.iter().map(|p| [p[0] - mean[0], p[1] - mean[1]]).collect()
}

/// The rendered crystal, normalized to a peak of one, and its spectrum.
pub struct Scene {
    pub canvas: Frame,
    spectrum: Array2<Complex64>,
    fft: Fft2,
    margin: usize,
    frame_shape: (usize, usize),
    pub pld: Option<PldTruth>,
}

impl Scene {
    pub fn render(params: &SynthParams) -> Result<Self> {
        params.validate()?;
        let (ch, cw) = params.canvas_shape();
        let mut rng = stream(params.seed, SCENE_STREAM);
        let pld = params.pld.as_ref().map(|p| {
            // periodic on the canvas so the wrap-around adds no defect
            let kx = (p.wavevector[0] * cw as f64).round() / cw as f64;
            let ky = (p.wavevector[1] * ch as f64).round() / ch as f64;
            PldTruth {
                amplitude: p.amplitude,
                wavevector: [kx, ky],
                phase: rng.random_range(0.0..2.0 * PI),
                character: p.character,
            }
        });
        let modes = envelope_modes(&mut rng, (ch, cw));
        let env_scale = params.envelope * (2.0 / ENVELOPE_MODES as f64).sqrt();
        let disorder = Normal::new(0.0, params.site_disorder.max(0.0)).unwrap();

        let ss = SUPERSAMPLE;
        let (sh, sw) = (ch * ss, cw * ss);
        let mut fine = Array2::<f64>::zeros((sh, sw));
        let [a1, a2] = params.lattice;
        let recip = reciprocal_basis(&params.lattice).expect("validated");
        // lattice index range covering the canvas
        let corners = [[0.0, 0.0], [cw as f64, 0.0], [0.0, ch as f64], [cw as f64, ch as f64]];
        let frac = |p: [f64; 2]| {
            [
                p[0] * recip[0][0] + p[1] * recip[0][1],
                p[0] * recip[1][0] + p[1] * recip[1][1],
            ]
        };
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for c in corners {
            let f = frac(c);
            for d in 0..2 {
                lo[d] = lo[d].min(f[d]);
                hi[d] = hi[d].max(f[d]);
            }
        }
        for i in (lo[0].floor() as i64 - 1)..=(hi[0].ceil() as i64 + 1) {
            for j in (lo[1].floor() as i64 - 1)..=(hi[1].ceil() as i64 + 1) {
                for atom in &params.atoms {
                    let (u, v) = (i as f64 + atom.position[0], j as f64 + atom.position[1]);
                    let mut x = u * a1[0] + v * a2[0];
                    let mut y = u * a1[1] + v * a2[1];
                    if !(0.0..cw as f64).contains(&x) || !(0.0..ch as f64).contains(&y) {
                        continue;
                    }
                    let jitter = 1.0 + disorder.sample(&mut rng);
                    let wave: f64 = modes.iter().map(|m| (2.0 * PI * (m[0] * x + m[1] * y) + m[2]).cos()).sum();
                    let envelope = (1.0 + env_scale * wave).max(0.0);
                    if let Some(p) = &pld {
                        let q = p.wavevector;
                        let qn = q[0].hypot(q[1]);
                        if qn > 0.0 {
                            let e = match p.character {
                                PldCharacter::Longitudinal => [q[0] / qn, q[1] / qn],
                                PldCharacter::Transverse => [-q[1] / qn, q[0] / qn],
                            };
                            let d = p.amplitude * (2.0 * PI * (q[0] * x + q[1] * y) + p.phase).sin();
                            x += d * e[0];
                            y += d * e[1];
                        }
                    }
                    splat(&mut fine, x, y, atom.width, atom.brightness * jitter * envelope, ss);
                }
            }
        }
        let mut canvas = Array2::<f64>::zeros((ch, cw));
        for ((r, c), v) in fine.indexed_iter() {
            canvas[[r / ss, c / ss]] += v;
        }
        canvas.mapv_inplace(|v| v / (ss * ss) as f64);
        let peak = canvas.iter().copied().fold(f64::MIN, f64::max);
        if !(peak > 0.0) {
            return Err(Error::Degenerate("synthetic scene is empty".into()));
        }
        canvas.mapv_inplace(|v| v / peak);

        let fft = Fft2::new(ch, cw);
        let spectrum = fft.forward_real(&canvas);
        Ok(Self {
            canvas,
            spectrum,
            fft,
            margin: params.margin,
            frame_shape: (params.height, params.width),
            pld,
        })
    }

    /// Noiseless frame with content translated by `offset`, peak-normalized.
    pub fn view(&self, offset: [f64; 2]) -> Frame {
        let mut spec = self.spectrum.clone();
        apply_shift_ramp(&mut spec, offset);
        self.fft.inverse(&mut spec);
        let (h, w) = self.frame_shape;
        let m = self.margin;
        spec.slice(s![m..m + h, m..m + w]).mapv(|v| v.re)
    }
}

// Plane waves `[kx, ky, phase]` periodic on the canvas, with periods inside
// ENVELOPE_PERIODS.
fn envelope_modes(rng: &mut ChaCha8Rng, (ch, cw): (usize, usize)) -> Vec<[f64; 3]> {
    let (p_lo, p_hi) = ENVELOPE_PERIODS;
    let mut allowed = Vec::new();
    let (mx, my) = ((cw as f64 / p_lo) as i64, (ch as f64 / p_lo) as i64);
    for ny in 0..=my {
        for nx in -mx..=mx {
            if ny == 0 && nx <= 0 {
                continue;
            }
            let k = [nx as f64 / cw as f64, ny as f64 / ch as f64];
            let period = 1.0 / k[0].hypot(k[1]);
            if (p_lo..=p_hi).contains(&period) {
                allowed.push(k);
            }
        }
    }
    if allowed.is_empty() {
        return Vec::new();
    }
    (0..ENVELOPE_MODES)
        .map(|_| {
            let k = allowed[rng.random_range(0..allowed.len())];
            [k[0], k[1], rng.random_range(0.0..2.0 * PI)]
        })
        .collect()
}

// Adds a wrapped Gaussian centred at (x, y) canvas pixels to the
// supersampled grid. Subsample k of pixel c sits at c - 1/2 + (k + 1/2)/ss.
fn splat(fine: &mut Array2<f64>, x: f64, y: f64, sigma: f64, amplitude: f64, ss: usize) {
    let (sh, sw) = fine.dim();
    let to_fine = |p: f64| (p + 0.5) * ss as f64 - 0.5;
    let (fx, fy) = (to_fine(x), to_fine(y));
    let reach = (4.0 * sigma * ss as f64).ceil() as i64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let scale = 1.0 / ss as f64;
    let (cx, cy) = (fx.round() as i64, fy.round() as i64);
    let wy: Vec<(usize, f64)> = (cy - reach..=cy + reach)
        .map(|r| {
            let d = (r as f64 - fy) * scale;
            (r.rem_euclid(sh as i64) as usize, (-d * d * inv).exp())
        })
        .collect();
    let wx: Vec<(usize, f64)> = (cx - reach..=cx + reach)
        .map(|c| {
            let d = (c as f64 - fx) * scale;
            (c.rem_euclid(sw as i64) as usize, (-d * d * inv).exp())
        })
        .collect();
    for &(r, gy) in &wy {
        for &(c, gx) in &wx {
            fine[[r, c]] += amplitude * gy * gx;
        }
    }
}

/// Renders the stack described by `params` and its ground truth.
pub fn generate_stack(params: &SynthParams) -> Result<(ImageStack, SynthTruth)> {
    let scene = Scene::render(params)?;
    let positions = trajectory(params);
    let burst_reach = if params.corrupt_frames.is_empty() { 0.0 } else { params.burst.max_offset };
    let excursion = positions.iter().map(|p| p[0].abs().max(p[1].abs())).fold(0.0, f64::max) + burst_reach;
    if excursion + SEAM_GUARD > params.margin as f64 {
        return Err(Error::DriftExceedsMargin {
            excursion,
            margin: params.margin,
        });
    }

    let mut burst_rng = stream(params.seed, BURST_STREAM);
    let blocks = params.height.div_ceil(params.burst.block_rows);
    let mut corrupted = params.corrupt_frames.clone();
    corrupted.sort_unstable();
    corrupted.dedup();
    let burst_offsets: Vec<Vec<[f64; 2]>> = (0..params.frame_count)
        .map(|i| {
            if corrupted.binary_search(&i).is_err() {
                return Vec::new();
            }
            (0..blocks)
                .map(|_| {
                    let mag = burst_rng.random_range(params.burst.min_offset..=params.burst.max_offset);
                    let ang = burst_rng.random_range(0.0..2.0 * PI);
                    [mag * ang.cos(), mag * ang.sin()]
                })
                .collect()
        })
        .collect();

    let bg = params.background;
    let frames: Vec<Frame> = (0..params.frame_count)
        .into_par_iter()
        .map(|i| {
            let p = positions[i];
            let mut view = scene.view(p);
            for (b, o) in burst_offsets[i].iter().enumerate() {
                let shifted = scene.view([p[0] + o[0], p[1] + o[1]]);
                let r0 = b * params.burst.block_rows;
                let r1 = (r0 + params.burst.block_rows).min(params.height);
                view.slice_mut(s![r0..r1, ..]).assign(&shifted.slice(s![r0..r1, ..]));
            }
            let intensity = view.mapv(|v| bg + (1.0 - bg) * v.max(0.0));
            match params.dose {
                None => intensity,
                Some(dose) => {
                    let mut rng = stream(params.seed, NOISE_STREAM_BASE + i as u64);
                    intensity.mapv(|v| Poisson::new(dose * v).unwrap().sample(&mut rng))
                }
            }
        })
        .collect();

    let stack = ImageStack::new(frames, params.frame_time, params.pixel_size)?;
    let truth = SynthTruth {
        format: TRUTH_FORMAT.into(),
        positions,
        lattice: params.lattice,
        reciprocal_basis: reciprocal_basis(&params.lattice).expect("validated"),
        pld: scene.pld.clone(),
        corrupted_frames: corrupted,
        frame_time: params.frame_time,
        pixel_size: params.pixel_size,
    };
    Ok((stack, truth))
}
