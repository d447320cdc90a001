//! `mgs`: one subcommand per pipeline stage, composed through files.
//!
//! Every run writes a TOML run manifest listing its arguments, the merged
//! configuration, and SHA-256 hashes of the files it read and wrote.

pub mod commands;
pub mod config;
pub mod error;
pub mod files;
pub mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mgs_core::matting::{BounceOrder, MatteChannel};

pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
use manifest::Recorder;

#[derive(Debug, Parser)]
#[command(
    name = "mgs",
    version,
    about = "Spectrally multiplexed matting: calibrate, key, composite, and friends"
)]
pub struct Cli {
    /// Pipeline config (TOML); flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for frame-parallel stages.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Seed for every random choice a command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Where to write the run manifest (default: next to the outputs).
    #[arg(long, global = true, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the crosstalk matrix from chart shots under each LED.
    Calibrate(CalibrateArgs),
    /// Key a single-colour-screen sequence into a premultiplied element.
    Key(KeyArgs),
    /// Composite an element over a background.
    Composite(CompositeArgs),
    /// Split a multiplexed capture into one sequence per lighting condition.
    Demux(DemuxArgs),
    /// Full-colour key from alternating magenta-green / green-magenta frames.
    Tmmgs(TmmgsArgs),
    /// Two-frame matting from white-lit and silhouette frames.
    TmmClassic(TmmClassicArgs),
    /// Matting from the same subject over two known backgrounds.
    Triangulate(TriangulateArgs),
    /// Estimate optical flow between frames.
    Flow(FlowArgs),
    /// Box-shutter motion blur along a flow field.
    Blur(BlurArgs),
    /// Render a synthetic capture set with ground truth.
    Synth(SynthArgs),
    /// Fill the missing channel as a mix of the two measured ones.
    ColorizeNaive(ColorizeNaiveArgs),
    /// Write tonemapped training pairs and a manifest for the colorizer.
    ExportTraining(ExportTrainingArgs),
    /// Merge a colorizer's predicted channel back into an element.
    MergeColorized(MergeColorizedArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Calibrate(_) => "calibrate",
            Command::Key(_) => "key",
            Command::Composite(_) => "composite",
            Command::Demux(_) => "demux",
            Command::Tmmgs(_) => "tmmgs",
            Command::TmmClassic(_) => "tmm-classic",
            Command::Triangulate(_) => "triangulate",
            Command::Flow(_) => "flow",
            Command::Blur(_) => "blur",
            Command::Synth(_) => "synth",
            Command::ColorizeNaive(_) => "colorize-naive",
            Command::ExportTraining(_) => "export-training",
            Command::MergeColorized(_) => "merge-colorized",
        }
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Chart shot lit by the red LED alone.
    #[arg(long)]
    pub red: PathBuf,
    #[arg(long)]
    pub green: PathBuf,
    #[arg(long)]
    pub blue: PathBuf,
    /// Chart rectangle as x,y,w,h.
    #[arg(long)]
    pub region: String,
    #[arg(long)]
    pub max_condition: Option<f64>,
    /// Calibration sidecar to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KeyArgs {
    /// Frame pattern, e.g. `mg/frame.%04d.exr`.
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Clean plate still.
    #[arg(long)]
    pub plate: Option<PathBuf>,
    /// Bounce plate still or per-frame pattern.
    #[arg(long)]
    pub bounce_plate: Option<String>,
    #[arg(long)]
    pub matte_channel: Option<MatteChannel>,
    #[arg(long)]
    pub eps_alpha: Option<f64>,
    #[arg(long)]
    pub bounce_order: Option<BounceOrder>,
    /// Divide by the plate's mean matte-channel level instead of per pixel.
    #[arg(long)]
    pub scalar_background: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Also write tonemapped lit channels for colorizer inference here.
    #[arg(long, value_name = "DIR")]
    pub colorizer_input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompositeArgs {
    /// Element frame pattern (RGBA, premultiplied).
    #[arg(long)]
    pub element: String,
    /// Background still or per-frame pattern.
    #[arg(long)]
    pub background: String,
    /// Colour matte pattern; replaces the element's scalar alpha.
    #[arg(long)]
    pub color_matte: Option<String>,
    /// Output frame pattern.
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct DemuxArgs {
    #[arg(long)]
    pub input: Option<String>,
    /// Comma-separated lighting cycle, e.g. `mg,gm`.
    #[arg(long)]
    pub conditions: Option<String>,
    /// Lighting changes per second.
    #[arg(long)]
    pub flash_rate: Option<f64>,
    #[arg(long)]
    pub phase: Option<usize>,
    /// Exposed fraction of the frame interval.
    #[arg(long)]
    pub shutter: Option<f64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TmmgsArgs {
    /// Magenta-green frame pattern.
    #[arg(long)]
    pub mg: String,
    /// Green-magenta frame pattern, paired with `--mg` in order.
    #[arg(long)]
    pub gm: String,
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[arg(long)]
    pub mg_plate: Option<PathBuf>,
    #[arg(long)]
    pub gm_plate: Option<PathBuf>,
    /// Magenta-green bounce plate still or pattern.
    #[arg(long)]
    pub bounce_plate: Option<String>,
    #[arg(long)]
    pub gm_bounce_plate: Option<String>,
    /// `auto`, `none`, or a flow-file pattern indexed by source frame.
    #[arg(long, default_value = "auto")]
    pub flow: String,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TmmClassicArgs {
    /// White-lit subject frames.
    #[arg(long)]
    pub lit: String,
    /// Silhouette frames, paired with `--lit` in order.
    #[arg(long)]
    pub silhouette: String,
    /// Still of the lit screen with nothing in front of it.
    #[arg(long)]
    pub level: PathBuf,
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// `auto`, `none`, or a flow-file pattern indexed by source frame.
    #[arg(long, default_value = "none")]
    pub flow: String,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TriangulateArgs {
    #[arg(long)]
    pub f1: String,
    /// Still of the first background.
    #[arg(long)]
    pub b1: PathBuf,
    #[arg(long)]
    pub f2: String,
    #[arg(long)]
    pub b2: PathBuf,
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Register the second frame onto the first by red-channel flow.
    #[arg(long)]
    pub align: bool,
    /// Also solve and write a per-channel matte.
    #[arg(long)]
    pub color_matte: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    /// Frame pattern, or a still when `--to` is given.
    #[arg(long)]
    pub input: String,
    /// Second still of a single pair.
    #[arg(long)]
    pub to: Option<String>,
    /// Output file, or pattern indexed by source frame.
    #[arg(long)]
    pub out: String,
    /// Frame distance between pair members.
    #[arg(long, default_value_t = 1)]
    pub step: usize,
    /// `r`, `g`, `b` or `mean`.
    #[arg(long, default_value = "mean")]
    pub channel: String,
}

#[derive(Debug, Args)]
pub struct BlurArgs {
    #[arg(long)]
    pub input: String,
    /// Flow file or pattern indexed by frame.
    #[arg(long)]
    pub flow: Option<String>,
    /// Uniform flow u,v in pixels per frame.
    #[arg(long)]
    pub velocity: Option<String>,
    /// Exposed fraction of the frame interval.
    #[arg(long)]
    pub shutter: Option<f64>,
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene description (TOML); a built-in scene when omitted.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ColorizeNaiveArgs {
    #[arg(long)]
    pub element: String,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportTrainingArgs {
    /// White-lit subject frames on black.
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Training crop side in pixels.
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Colour matte pattern; exports matte-colorization pairs instead.
    #[arg(long)]
    pub color_matte: Option<String>,
}

#[derive(Debug, Args)]
pub struct MergeColorizedArgs {
    /// Missing-channel element pattern.
    #[arg(long)]
    pub element: String,
    /// Predicted single-channel frames, tonemapped, named like the inputs.
    #[arg(long)]
    pub predicted: String,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Shared state of one command run.
pub struct Ctx {
    pub cfg: PipelineConfig,
    pub rec: Recorder,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let args: Vec<String> = argv
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match execute(cli, &args) {
        Ok(manifest) => {
            eprintln!("wrote {}", manifest.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Runs a parsed command and returns the path of its run manifest.
pub fn execute(cli: Cli, args: &[String]) -> CliResult<PathBuf> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::invalid("jobs", "must be at least 1"));
        }
        // A pool may already exist when called in-process more than once.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let mut ctx = Ctx {
        cfg,
        rec: Recorder::default(),
    };
    let name = cli.command.name();
    let out_dir = commands::dispatch(&cli.command, &mut ctx)?;
    let path = cli
        .manifest
        .unwrap_or_else(|| out_dir.join(format!("{name}.run.toml")));
    let Ctx { cfg, rec } = ctx;
    rec.finish(name, args, &cfg, &path)?;
    Ok(path)
}

pub(crate) fn parent_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|d| !d.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}
