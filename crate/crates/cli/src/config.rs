//! Register configuration file and command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use stemreg::peaks::PeakMethod;
use stemreg::pipeline::Settings;
use stemreg::preprocess::WindowKind;
use stemreg::shiftmatrix::OutlierMethod;
use stemreg::spectral::{CorrelationMethod, MaskSpec};

pub const CONFIG_FORMAT: &str = "stemreg-config";

fn config_format() -> String {
    CONFIG_FORMAT.into()
}

/// Contents of a `register` configuration file. Relative paths are resolved
/// against the file's directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterConfig {
    #[serde(default = "config_format")]
    pub format: String,
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Ground truth to score the registration against.
    #[serde(default)]
    pub truth: Option<PathBuf>,
    #[serde(default)]
    pub settings: Settings,
}

impl RegisterConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RegisterConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if cfg.format != CONFIG_FORMAT {
            bail!("config format must be \"{CONFIG_FORMAT}\", got \"{}\"", cfg.format);
        }
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.input, &mut cfg.output, &mut cfg.truth].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WindowArg {
    None,
    Hann,
    MirrorPad,
    PeriodicSmooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Cross,
    Mutual,
    Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MaskArg {
    None,
    Lowpass,
    Bandpass,
    AnisotropicGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PeakArg {
    Argmax,
    GaussianFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutlierArg {
    Transitivity,
    Neighbor,
    BackgroundFit,
}

/// Flags that override individual settings of the configuration file.
#[derive(Debug, Clone, Default, Args)]
pub struct SettingsArgs {
    /// Real-space boundary handling.
    #[arg(long, value_enum)]
    pub window: Option<WindowArg>,
    /// Correlation function.
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Fourier weighting mask.
    #[arg(long, value_enum)]
    pub mask: Option<MaskArg>,
    /// Upper cutoff in cycles/px (lowpass, bandpass).
    #[arg(long)]
    pub k_max: Option<f64>,
    /// Lower cutoff in cycles/px (bandpass).
    #[arg(long)]
    pub k_min: Option<f64>,
    /// Per-axis width of the anisotropic mask in units of |b_i|.
    #[arg(long)]
    pub axis_scale: Option<f64>,
    /// Peak locator.
    #[arg(long, value_enum)]
    pub peak: Option<PeakArg>,
    /// Local maxima tried by the Gaussian fit.
    #[arg(long)]
    pub candidates: Option<usize>,
    #[arg(long, value_enum)]
    pub outlier_method: Option<OutlierArg>,
    /// Outlier threshold in pixels.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Exclude a frame when more than this fraction of its row is invalid.
    #[arg(long)]
    pub row_outlier_fraction: Option<f64>,
    /// Transitivity paths per matrix element.
    #[arg(long)]
    pub max_paths: Option<usize>,
}

impl SettingsArgs {
    pub fn apply(&self, s: &mut Settings) -> anyhow::Result<()> {
        if let Some(w) = self.window {
            s.window = match w {
                WindowArg::None => WindowKind::None,
                WindowArg::Hann => WindowKind::Hann,
                WindowArg::MirrorPad => WindowKind::MirrorPad,
                WindowArg::PeriodicSmooth => WindowKind::PeriodicSmooth,
            };
        }
        if let Some(m) = self.method {
            s.method = match m {
                MethodArg::Cross => CorrelationMethod::Cross,
                MethodArg::Mutual => CorrelationMethod::Mutual,
                MethodArg::Phase => CorrelationMethod::Phase,
            };
        }
        self.apply_mask(s)?;
        match (self.peak, self.candidates) {
            (Some(PeakArg::Argmax), Some(_)) => bail!("--candidates only applies to --peak gaussian-fit"),
            (Some(PeakArg::Argmax), None) => s.peak = PeakMethod::Argmax,
            (Some(PeakArg::GaussianFit), k) => {
                s.peak = PeakMethod::GaussianFit {
                    candidates: k.unwrap_or(match s.peak {
                        PeakMethod::GaussianFit { candidates } => candidates,
                        PeakMethod::Argmax => 5,
                    }),
                }
            }
            (None, Some(k)) => match &mut s.peak {
                PeakMethod::GaussianFit { candidates } => *candidates = k,
                PeakMethod::Argmax => bail!("--candidates only applies to --peak gaussian-fit"),
            },
            (None, None) => {}
        }
        if let Some(o) = self.outlier_method {
            s.outlier_method = match o {
                OutlierArg::Transitivity => OutlierMethod::Transitivity,
                OutlierArg::Neighbor => OutlierMethod::Neighbor,
                OutlierArg::BackgroundFit => OutlierMethod::BackgroundFit,
            };
        }
        if let Some(t) = self.threshold {
            s.threshold = Some(t);
        }
        if let Some(f) = self.row_outlier_fraction {
            s.row_outlier_fraction = f;
        }
        if let Some(p) = self.max_paths {
            s.max_paths = p;
        }
        Ok(())
    }

    fn apply_mask(&self, s: &mut Settings) -> anyhow::Result<()> {
        if let Some(kind) = self.mask {
            let need = |v: Option<f64>, flag: &str| v.with_context(|| format!("--mask {kind:?} requires {flag}"));
            s.mask = match kind {
                MaskArg::None => MaskSpec::None,
                MaskArg::Lowpass => MaskSpec::Lowpass {
                    k_max: need(self.k_max, "--k-max")?,
                },
                MaskArg::Bandpass => MaskSpec::Bandpass {
                    k_min: need(self.k_min, "--k-min")?,
                    k_max: need(self.k_max, "--k-max")?,
                },
                MaskArg::AnisotropicGaussian => MaskSpec::AnisotropicGaussian {
                    axis_scale: self.axis_scale.unwrap_or(1.0),
                    basis: None,
                },
            };
            return Ok(());
        }
        match &mut s.mask {
            MaskSpec::Lowpass { k_max } => {
                if let Some(k) = self.k_max {
                    *k_max = k;
                }
            }
            MaskSpec::Bandpass { k_min, k_max } => {
                if let Some(k) = self.k_max {
                    *k_max = k;
                }
                if let Some(k) = self.k_min {
                    *k_min = k;
                }
            }
            MaskSpec::AnisotropicGaussian { axis_scale, .. } => {
                if let Some(a) = self.axis_scale {
                    *axis_scale = a;
                }
            }
            MaskSpec::None => {}
        }
        let stray = match s.mask {
            MaskSpec::Lowpass { .. } => self.k_min.is_some() || self.axis_scale.is_some(),
            MaskSpec::Bandpass { .. } => self.axis_scale.is_some(),
            MaskSpec::AnisotropicGaussian { .. } => self.k_max.is_some() || self.k_min.is_some(),
            MaskSpec::None => self.k_max.is_some() || self.k_min.is_some() || self.axis_scale.is_some(),
        };
        if stray {
            bail!("mask parameter flags do not match the configured mask; pass --mask as well");
        }
        Ok(())
    }
}
