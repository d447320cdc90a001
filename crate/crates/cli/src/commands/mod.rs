mod keying;
mod motion;
mod multiplexing;
pub mod synth;
pub mod training;

use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};
use crate::{Command, Ctx};

/// Runs `cmd` and returns the directory its manifest belongs in.
pub fn dispatch(cmd: &Command, ctx: &mut Ctx) -> CliResult<PathBuf> {
    match cmd {
        Command::Calibrate(a) => keying::calibrate(a, ctx),
        Command::Key(a) => keying::key(a, ctx),
        Command::Composite(a) => keying::composite(a, ctx),
        Command::ColorizeNaive(a) => keying::colorize_naive(a, ctx),
        Command::Demux(a) => multiplexing::demux(a, ctx),
        Command::Tmmgs(a) => multiplexing::tmmgs(a, ctx),
        Command::TmmClassic(a) => multiplexing::tmm_classic(a, ctx),
        Command::Triangulate(a) => multiplexing::triangulate(a, ctx),
        Command::Flow(a) => motion::flow(a, ctx),
        Command::Blur(a) => motion::blur(a, ctx),
        Command::Synth(a) => synth::synth(a, ctx),
        Command::ExportTraining(a) => training::export_training(a, ctx),
        Command::MergeColorized(a) => training::merge_colorized(a, ctx),
    }
}

/// The flag value, else the config value, else an error naming the flag.
fn pick<T: Clone>(flag: &Option<T>, config: &Option<T>, what: &str, name: &str) -> CliResult<T> {
    flag.clone()
        .or_else(|| config.clone())
        .ok_or_else(|| CliError::unspecified(what, name))
}

fn out_dir(flag: &Option<PathBuf>, ctx: &Ctx) -> CliResult<PathBuf> {
    pick(flag, &ctx.cfg.paths.output, "output directory", "--out-dir")
}

fn pattern_dir(pattern: &str) -> PathBuf {
    crate::parent_dir(Path::new(pattern))
}
