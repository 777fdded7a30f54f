//! Batch driver for the `stemreg` command: `register`, `synth` and `compare`.

pub mod compare;
pub mod config;
pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde::Serialize;
use stemreg::reconstruct::power_spectrum;
use stemreg::stack_io::{load_stack, save_image, save_stack, ImageFormat};
use stemreg::synth::{generate_stack, preset, SynthParams, PRESETS};
use stemreg::Frame;

use crate::compare::{compare, Positions};
use crate::config::{RegisterConfig, SettingsArgs};
use crate::report::{Report, Status};

pub const ERROR_FORMAT: &str = "stemreg-error";

/// Exit status of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// A report was written but outliers remain after repair.
    UnrepairedOutliers,
}

impl Outcome {
    pub fn code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::UnrepairedOutliers => 2,
        }
    }
}

/// Exit status for fatal errors.
pub const FATAL_EXIT: u8 = 1;

#[derive(Debug, Parser)]
#[command(name = "stemreg", version, about = "All-pairs rigid registration of low-SNR image stacks")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register and average a stack.
    Register(RegisterArgs),
    /// Write a synthetic stack and its ground truth.
    Synth(SynthArgs),
    /// Compare positions from two reports or truth files.
    Compare(CompareArgs),
}

#[derive(Debug, clap::Args)]
pub struct RegisterArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Stack manifest; overrides the configuration.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory; overrides the configuration.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Ground truth file; adds a comparison to the report.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub settings: SettingsArgs,
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    /// Preset name or JSON parameter file.
    pub source: String,
    /// Output directory.
    pub output: PathBuf,
    /// Replaces the seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replaces the frame count.
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Debug, clap::Args)]
pub struct CompareArgs {
    pub first: PathBuf,
    pub second: PathBuf,
    /// Also write the metrics to this file.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Machine-readable record of a fatal error.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub format: &'static str,
    pub kind: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<(usize, usize)>>,
}

impl ErrorRecord {
    pub fn new(err: &anyhow::Error) -> Self {
        let core = err.chain().find_map(|e| e.downcast_ref::<stemreg::Error>());
        Self {
            format: ERROR_FORMAT,
            kind: core.map_or("cli", |e| e.kind()).into(),
            message: format!("{err:#}"),
            pairs: match core {
                Some(stemreg::Error::Unrepairable { pairs }) => Some(pairs.clone()),
                _ => None,
            },
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<Outcome> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        // a second call fails harmlessly when a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Register(args) => register(&args),
        Command::Synth(args) => synth(&args).map(|_| Outcome::Success),
        Command::Compare(args) => {
            let metrics = compare_files(&args.first, &args.second)?;
            let text = serde_json::to_string_pretty(&metrics)?;
            println!("{text}");
            if let Some(out) = &args.output {
                std::fs::write(out, text + "\n").with_context(|| format!("writing {}", out.display()))?;
            }
            Ok(Outcome::Success)
        }
    }
}

pub fn compare_files(a: &Path, b: &Path) -> anyhow::Result<compare::Metrics> {
    compare(&Positions::load(a)?, &Positions::load(b)?)
}

/// Runs `register`. Fatal errors are also written to `error.json` in the
/// output directory when it is known.
pub fn register(args: &RegisterArgs) -> anyhow::Result<Outcome> {
    let mut cfg = match &args.config {
        Some(path) => RegisterConfig::load(path)?,
        None => RegisterConfig::default(),
    };
    if let Some(p) = &args.input {
        cfg.input = Some(p.clone());
    }
    if let Some(p) = &args.output {
        cfg.output = Some(p.clone());
    }
    if let Some(p) = &args.truth {
        cfg.truth = Some(p.clone());
    }
    let output = cfg.output.clone().context("no output directory (--output or \"output\" in the config)")?;
    std::fs::create_dir_all(&output).with_context(|| format!("creating {}", output.display()))?;
    for stale in ["report.json", "error.json"] {
        let path = output.join(stale);
        if path.exists() {
            std::fs::remove_file(&path).with_context(|| format!("removing {}", path.display()))?;
        }
    }
    let result = register_into(args, &cfg, &output);
    if let Err(err) = &result {
        let record = serde_json::to_string_pretty(&ErrorRecord::new(err))?;
        std::fs::write(output.join("error.json"), record + "\n").context("writing error.json")?;
    }
    result
}

fn register_into(args: &RegisterArgs, cfg: &RegisterConfig, output: &Path) -> anyhow::Result<Outcome> {
    let start = Instant::now();
    let input = cfg.input.clone().context("no input manifest (--input or \"input\" in the config)")?;
    let mut settings = cfg.settings.clone();
    args.settings.apply(&mut settings)?;
    let stack = load_stack(&input)?;
    let reg = stemreg::pipeline::register(&stack, &settings)?;

    let mut report = Report::new(input, &stack.metadata, &reg, 0.0);
    if let Some(truth) = &cfg.truth {
        let truth = Positions::load(truth)?;
        report.comparison = Some(compare(&Positions::from_report(&report), &truth)?);
    }
    let a = &report.artifacts;
    save_image(&reg.average.image, output.join(&a.average_raw), ImageFormat::RawFloat32)?;
    save_image(&reg.average.image, output.join(&a.average_pgm), ImageFormat::Pgm16)?;
    save_image(&reg.average.count.mapv(f64::from), output.join(&a.coverage_pgm), ImageFormat::Pgm16)?;
    let first = reg.solution.included()[0];
    save_image(&power_spectrum(&stack.frames[first]), output.join(&a.power_spectrum_frame_pgm), ImageFormat::Pgm16)?;
    save_image(&power_spectrum(&reg.average.image), output.join(&a.power_spectrum_average_pgm), ImageFormat::Pgm16)?;
    save_image(&reg.measured.x, output.join(&a.shift_x_measured_pgm), ImageFormat::Pgm16)?;
    save_image(&reg.measured.y, output.join(&a.shift_y_measured_pgm), ImageFormat::Pgm16)?;
    save_image(&reg.repaired.x, output.join(&a.shift_x_repaired_pgm), ImageFormat::Pgm16)?;
    save_image(&reg.repaired.y, output.join(&a.shift_y_repaired_pgm), ImageFormat::Pgm16)?;
    let validity: Frame = reg.detected.mapv(|v| if v { 1.0 } else { 0.0 });
    save_image(&validity, output.join(&a.validity_pgm), ImageFormat::Pgm16)?;

    report.timing.total_seconds = start.elapsed().as_secs_f64();
    let text = serde_json::to_string_pretty(&report)?;
    std::fs::write(output.join("report.json"), text + "\n").context("writing report.json")?;
    Ok(match report.status {
        Status::Ok => Outcome::Success,
        Status::UnrepairedOutliers => Outcome::UnrepairedOutliers,
    })
}

/// Files written by [`synth`].
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest: PathBuf,
    pub truth: PathBuf,
    pub params: PathBuf,
}

pub fn load_params(source: &str) -> anyhow::Result<SynthParams> {
    if let Some(p) = preset(source) {
        return Ok(p);
    }
    let path = Path::new(source);
    if !path.exists() {
        bail!("{source:?} is neither a preset ({}) nor a parameter file", PRESETS.join(", "));
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {source}"))?;
    let params: SynthParams = serde_json::from_str(&text).with_context(|| format!("parsing {source}"))?;
    params.validate()?;
    Ok(params)
}

pub fn synth(args: &SynthArgs) -> anyhow::Result<SynthOutput> {
    let mut params = load_params(&args.source)?;
    if let Some(seed) = args.seed {
        params.seed = seed;
    }
    if let Some(n) = args.frames {
        params.frame_count = n;
        if let stemreg::synth::DriftModel::Explicit { positions } = &params.drift {
            if positions.len() != n {
                bail!("--frames {n} conflicts with the {} explicit drift positions", positions.len());
            }
        }
    }
    let (stack, truth) = generate_stack(&params)?;
    let manifest = save_stack(&stack, &args.output, "stack")?;
    let truth_path = args.output.join("truth.json");
    std::fs::write(&truth_path, serde_json::to_string_pretty(&truth)? + "\n")
        .with_context(|| format!("writing {}", truth_path.display()))?;
    let params_path = args.output.join("params.json");
    std::fs::write(&params_path, serde_json::to_string_pretty(&params)? + "\n")
        .with_context(|| format!("writing {}", params_path.display()))?;
    Ok(SynthOutput {
        manifest,
        truth: truth_path,
        params: params_path,
    })
}
