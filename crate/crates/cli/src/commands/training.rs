//! The file interface to the learned colorizer.
//!
//! `export-training` writes tonemapped input/target pairs and a manifest the
//! trainer reads; `merge-colorized` reads the trainer's predictions back into
//! an element. Inference inputs come from `key --colorizer-input`.

use std::fs;
use std::path::{Path, PathBuf};

use mgs_core::image::io::{read_image, write_exr_named, FramePattern};
use mgs_core::image::{inverse_tonemap, tonemap, LinearImage, Transfer};
use mgs_core::matting::{ColorizationState, ForegroundElement};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::keying::lit_names;
use super::{out_dir, pick};
use crate::config::require_file;
use crate::error::{CliError, CliResult};
use crate::files::{
    frames_in, load_calibration, load_color_mattes, load_elements, load_frames, save_elements,
};
use crate::{Ctx, ExportTrainingArgs, MergeColorizedArgs};

/// Largest default training crop.
pub const MAX_DEFAULT_CROP: usize = 512;
pub const LUMINANCE_SCALE_RANGE: [f64; 2] = [0.7, 1.3];
pub const COLOR_BALANCE_RANGE: [f64; 2] = [0.9, 1.1];
pub const MANIFEST_NAME: &str = "manifest.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub luminance_scale: [f64; 2],
    pub color_balance: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingEntry {
    pub frame: usize,
    /// Relative to the manifest's directory.
    pub input: String,
    pub target: String,
    pub width: usize,
    pub height: usize,
    /// Drawn from the manifest seed; the trainer may use or redraw them.
    pub crop_origin: [usize; 2],
    pub luminance_scale: f64,
    pub color_balance: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    /// `colorize` (measured channels to missing channel) or `matte` (one
    /// matte channel plus previous-frame colour to the other two).
    pub kind: String,
    pub tonemap_gamma: f64,
    pub seed: u64,
    pub crop: usize,
    pub input_channels: Vec<String>,
    pub target_channels: Vec<String>,
    pub augmentation: Augmentation,
    pub entries: Vec<TrainingEntry>,
}

impl TrainingManifest {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

fn write_named(ctx: &mut Ctx, img: &LinearImage, path: PathBuf, names: &[String]) -> CliResult<()> {
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    write_exr_named(img, &path, &names, Transfer::Linear)?;
    ctx.rec.output(path);
    Ok(())
}

pub fn export_training(a: &ExportTrainingArgs, ctx: &mut Ctx) -> CliResult<PathBuf> {
    let input = pick(
        &a.input,
        &ctx.cfg.paths.input,
        "white-lit sequence",
        "--input",
    )?;
    let out = out_dir(&a.out_dir, ctx)?;
    let gamma = a.gamma.unwrap_or(ctx.cfg.tonemap_gamma);
    let seed = ctx.cfg.seed.unwrap_or(0);
    let cal = load_calibration(
        &mut ctx.rec,
        a.calibration
            .as_deref()
            .or(ctx.cfg.paths.calibration.as_deref()),
        false,
    )?;
    let (seq, _) = load_frames(&mut ctx.rec, &ctx.cfg, "white-lit sequence", &input)?;
    if seq.is_empty() {
        return Err(mgs_core::Error::EmptySequence(input).into());
    }
    let mattes = match &a.color_matte {
        Some(p) => Some(load_color_mattes(&mut ctx.rec, &ctx.cfg, p)?),
        None => None,
    };
    let (w, h) = seq.frames()[0].dims();
    let crop = a
        .crop
        .or(ctx.cfg.crop)
        .unwrap_or_else(|| MAX_DEFAULT_CROP.min(w).min(h));
    if crop == 0 || crop > w.min(h) {
        return Err(CliError::invalid(
            "crop",
            format!("{crop} px does not fit {w}x{h} frames"),
        ));
    }

    let mc = ctx.cfg.matte_channel;
    let [l0, l1] = mc.lit_channels();
    let lit = lit_names(mc);
    let (kind, input_channels, target_channels) = match mattes {
        None => ("colorize", lit.to_vec(), vec![mc.to_string()]),
        Some(_) => (
            "matte",
            vec![format!("A{mc}"), "R".into(), "G".into(), "B".into()],
            vec![format!("A{}", lit[0]), format!("A{}", lit[1])],
        ),
    };

    let toned: Vec<LinearImage> = seq
        .frames()
        .par_iter()
        .map(|f| Ok(tonemap(&cal.apply(f)?, gamma)?))
        .collect::<CliResult<_>>()?;
    let in_pat = FramePattern::parse(&frames_in(&out.join("input")))?;
    let tgt_pat = FramePattern::parse(&frames_in(&out.join("target")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(seq.len());
    for (k, (&i, frame)) in seq.indices().iter().zip(&toned).enumerate() {
        let (pair_in, pair_target) = match &mattes {
            None => (
                LinearImage::from_channels(&[&frame.channel(l0), &frame.channel(l1)])?,
                frame.channel(mc.index()),
            ),
            Some(m) => {
                let matte = m
                    .get(&i)
                    .ok_or_else(|| CliError::invalid("colour matte", format!("no frame {i}")))?;
                let alpha = matte.alpha_rgb();
                let prev = &toned[k.saturating_sub(1)];
                (
                    LinearImage::from_channels(&[
                        &alpha.channel(mc.index()),
                        &prev.channel(0),
                        &prev.channel(1),
                        &prev.channel(2),
                    ])?,
                    LinearImage::from_channels(&[&alpha.channel(l0), &alpha.channel(l1)])?,
                )
            }
        };
        let in_path = in_pat.path(i);
        let tgt_path = tgt_pat.path(i);
        write_named(ctx, &pair_in, in_path.clone(), &input_channels)?;
        write_named(ctx, &pair_target, tgt_path.clone(), &target_channels)?;
        let crop_origin = [
            rng.random_range(0..=w - crop),
            rng.random_range(0..=h - crop),
        ];
        let luminance_scale = rng.random_range(LUMINANCE_SCALE_RANGE[0]..=LUMINANCE_SCALE_RANGE[1]);
        let color_balance =
            [(); 3].map(|_| rng.random_range(COLOR_BALANCE_RANGE[0]..=COLOR_BALANCE_RANGE[1]));
        entries.push(TrainingEntry {
            frame: i,
            input: relative(&in_path, &out),
            target: relative(&tgt_path, &out),
            width: w,
            height: h,
            crop_origin,
            luminance_scale,
            color_balance,
        });
    }
    let manifest = TrainingManifest {
        kind: kind.into(),
        tonemap_gamma: gamma,
        seed,
        crop,
        input_channels,
        target_channels,
        augmentation: Augmentation {
            luminance_scale: LUMINANCE_SCALE_RANGE,
            color_balance: COLOR_BALANCE_RANGE,
        },
        entries,
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| CliError::invalid("training manifest", e.to_string()))?;
    crate::files::write_text(&mut ctx.rec, out.join(MANIFEST_NAME), &text)?;
    ctx.rec.param("input", &input);
    ctx.rec.param("kind", kind);
    ctx.rec.param("crop", crop);
    ctx.rec.param("tonemap_gamma", gamma);
    ctx.rec.param("entries", manifest.entries.len());
    Ok(out)
}

fn relative(path: &Path, base: &Path) -> String {
    path.strip_prefix(base)
        .unwrap_or(path)
        .to_string_lossy()
        .into_owned()
}

/// Inverse-tonemaps a predicted channel and restores it into `elem`,
/// zeroed wherever the element is fully transparent.
pub fn merge_prediction(
    elem: &ForegroundElement,
    predicted: &LinearImage,
    gamma: f64,
) -> CliResult<ForegroundElement> {
    let mut plane = inverse_tonemap(predicted, gamma)?;
    for (v, &a) in plane.data_mut().iter_mut().zip(elem.alpha().data()) {
        if a == 0.0 {
            *v = 0.0;
        }
    }
    Ok(elem.with_restored_channel(&plane, ColorizationState::Ml)?)
}

pub fn merge_colorized(a: &MergeColorizedArgs, ctx: &mut Ctx) -> CliResult<PathBuf> {
    let out = out_dir(&a.out_dir, ctx)?;
    let gamma = a.gamma.unwrap_or(ctx.cfg.tonemap_gamma);
    let seq = load_elements(&mut ctx.rec, &ctx.cfg, &a.element)?;
    let pat = FramePattern::parse(&a.predicted)?;
    let mut predicted = Vec::with_capacity(seq.indices.len());
    for &i in &seq.indices {
        let path = pat.path(i);
        require_file(&format!("predicted channel for frame {i}"), &path)?;
        let img = read_image(&path, Transfer::Linear)?;
        if img.channels() != 1 {
            return Err(CliError::invalid(
                format!("prediction {}", path.display()),
                format!("expected 1 channel, found {}", img.channels()),
            ));
        }
        ctx.rec.input(path);
        predicted.push(img);
    }
    let merged: Vec<ForegroundElement> = seq
        .elements
        .par_iter()
        .zip(predicted.par_iter())
        .map(|(e, p)| merge_prediction(e, p, gamma))
        .collect::<CliResult<_>>()?;
    save_elements(
        &mut ctx.rec,
        &merged,
        &seq.indices,
        seq.frame_rate,
        &seq.label,
        &frames_in(&out.join("element")),
    )?;
    ctx.rec.param("element", &a.element);
    ctx.rec.param("predicted", &a.predicted);
    ctx.rec.param("tonemap_gamma", gamma);
    Ok(out)
}
