//! Stack container, manifest I/O and image export.
//!
//! A stack on disk is a JSON manifest plus one headerless raw file per frame
//! (row-major, `f32`, little-endian). See `docs/formats.md` for the schema.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Frame, Result};

pub const MANIFEST_FORMAT: &str = "stemreg-stack";
pub const MANIFEST_VERSION: u32 = 1;
pub const DTYPE_F32_LE: &str = "float32-le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackMetadata {
    pub frame_count: usize,
    pub height: usize,
    pub width: usize,
    /// Seconds between frame starts.
    pub frame_time: f64,
    /// Å per pixel, when known.
    pub pixel_size: Option<f64>,
}

impl StackMetadata {
    pub fn validate(&self) -> Result<()> {
        if self.frame_count < 2 {
            return Err(Error::TooFewFrames(self.frame_count));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Manifest(format!(
                "frame shape must be positive, got {}x{}",
                self.height, self.width
            )));
        }
        if !(self.frame_time.is_finite() && self.frame_time > 0.0) {
            return Err(Error::Manifest(format!("frame_time must be > 0, got {}", self.frame_time)));
        }
        if let Some(p) = self.pixel_size {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::Manifest(format!("pixel_size must be > 0, got {p}")));
            }
        }
        Ok(())
    }
}

/// An ordered sequence of equally sized frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    pub metadata: StackMetadata,
    pub frames: Vec<Frame>,
}

impl ImageStack {
    /// Builds a stack, checking every metadata and frame invariant.
    pub fn new(frames: Vec<Frame>, frame_time: f64, pixel_size: Option<f64>) -> Result<Self> {
        let (height, width) = frames.first().map(|f| f.dim()).unwrap_or((0, 0));
        let metadata = StackMetadata {
            frame_count: frames.len(),
            height,
            width,
            frame_time,
            pixel_size,
        };
        metadata.validate()?;
        for (i, frame) in frames.iter().enumerate() {
            check_frame(i, frame, height, width)?;
        }
        Ok(Self { metadata, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.metadata.height, self.metadata.width)
    }
}

fn check_frame(index: usize, frame: &Frame, height: usize, width: usize) -> Result<()> {
    if frame.dim() != (height, width) {
        return Err(Error::DimensionMismatch {
            context: format!("frame {index}"),
            expected: format!("{height}x{width}"),
            found: format!("{}x{}", frame.nrows(), frame.ncols()),
        });
    }
    if let Some(((row, col), _)) = frame.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { frame: index, row, col });
    }
    Ok(())
}

/// On-disk manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub height: usize,
    pub width: usize,
    pub frame_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_size: Option<f64>,
    /// Frame files, relative to the manifest's directory unless absolute.
    pub frames: Vec<PathBuf>,
}

pub fn load_stack(manifest_path: impl AsRef<Path>) -> Result<ImageStack> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(manifest_path.to_path_buf()),
        _ => Error::io(manifest_path, e),
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Manifest(format!(
            "format must be \"{MANIFEST_FORMAT}\", got \"{}\"",
            manifest.format
        )));
    }
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Manifest(format!("unsupported version {}", manifest.version)));
    }
    if manifest.dtype != DTYPE_F32_LE {
        return Err(Error::Manifest(format!(
            "dtype must be \"{DTYPE_F32_LE}\", got \"{}\"",
            manifest.dtype
        )));
    }
    let metadata = StackMetadata {
        frame_count: manifest.frames.len(),
        height: manifest.height,
        width: manifest.width,
        frame_time: manifest.frame_time,
        pixel_size: manifest.pixel_size,
    };
    metadata.validate()?;

    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let frames = manifest
        .frames
        .iter()
        .enumerate()
        .map(|(i, rel)| {
            let frame = read_raw_frame(&base.join(rel), metadata.height, metadata.width)?;
            check_frame(i, &frame, metadata.height, metadata.width)?;
            Ok(frame)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ImageStack { metadata, frames })
}

/// Writes every frame as `<prefix>_NNNN.raw` next to `<prefix>.json` in `dir`
/// and returns the manifest path.
pub fn save_stack(stack: &ImageStack, dir: impl AsRef<Path>, prefix: &str) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::with_capacity(stack.len());
    for (i, frame) in stack.frames.iter().enumerate() {
        let name = PathBuf::from(format!("{prefix}_{i:04}.raw"));
        write_raw(frame, &dir.join(&name))?;
        names.push(name);
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        dtype: DTYPE_F32_LE.into(),
        height: stack.metadata.height,
        width: stack.metadata.width,
        frame_time: stack.metadata.frame_time,
        pixel_size: stack.metadata.pixel_size,
        frames: names,
    };
    let path = dir.join(format!("{prefix}.json"));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn read_raw_frame(path: &Path, height: usize, width: usize) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let expected = height * width * 4;
    if bytes.len() != expected {
        return Err(Error::DimensionMismatch {
            context: path.display().to_string(),
            expected: format!("{expected} bytes ({height}x{width} float32)"),
            found: format!("{} bytes", bytes.len()),
        });
    }
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok(Array2::from_shape_vec((height, width), values).expect("length checked above"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImageFormat {
    /// Headerless row-major little-endian `f32`.
    RawFloat32,
    /// Binary 16-bit PGM (`P5`, maxval 65535), min-max scaled.
    Pgm16,
}

pub fn save_image(image: &Frame, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    let path = path.as_ref();
    if let Some(((row, col), _)) = image.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { frame: 0, row, col });
    }
    match format {
        ImageFormat::RawFloat32 => write_raw(image, path),
        ImageFormat::Pgm16 => write_pgm16(image, path),
    }
}

fn write_raw(image: &Frame, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(image.len() * 4);
    for &v in image.iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Min-max scales to `0..=65535`, rounding half to even. A constant image
/// maps to all zeros.
pub fn scale_to_u16(image: &Frame) -> Array2<u16> {
    let (min, max) = image
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = max - min;
    if !(range > 0.0) {
        return Array2::zeros(image.dim());
    }
    let scale = 65535.0 / range;
    image.mapv(|v| ((v - min) * scale).round_ties_even().clamp(0.0, 65535.0) as u16)
}

fn write_pgm16(image: &Frame, path: &Path) -> Result<()> {
    let scaled = scale_to_u16(image);
    let (h, w) = scaled.dim();
    let mut out = Vec::with_capacity(32 + h * w * 2);
    write!(out, "P5\n{w} {h}\n65535\n").expect("writing to a Vec cannot fail");
    for &v in scaled.iter() {
        out.extend_from_slice(&v.to_be_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a binary 16-bit PGM written by [`save_image`].
pub fn read_pgm16(path: impl AsRef<Path>) -> Result<Array2<u16>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Manifest(format!("{}: truncated PGM header", path.display())));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Manifest(format!("bad PGM header field {s:?}")));
    if fields[0] != "P5" || parse(&fields[3])? != 65535 {
        return Err(Error::Manifest(format!("{}: not a 16-bit binary PGM", path.display())));
    }
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let data = bytes.get(pos..pos + w * h * 2).ok_or_else(|| Error::DimensionMismatch {
        context: path.display().to_string(),
        expected: format!("{} data bytes", w * h * 2),
        found: format!("{} data bytes", bytes.len().saturating_sub(pos)),
    })?;
    let values = data.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect();
    Ok(Array2::from_shape_vec((h, w), values).expect("length checked above"))
}
