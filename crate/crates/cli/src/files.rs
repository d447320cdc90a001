//! Loading and saving the on-disk forms of frames, plates, elements and
//! schedules, recording every file touched.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mgs_core::calibration::{CalibrationMatrix, ChartRegion};
use mgs_core::compositing::ColorMatte;
use mgs_core::image::io::{
    load_sequence, load_sequence_with_meta, read_image, save_sequence_with_extra, EncodeOptions,
    FramePattern, SequenceMeta,
};
use mgs_core::image::{FrameSequence, LinearImage, Transfer};
use mgs_core::matting::{ColorizationState, ForegroundElement, MatteChannel};
use mgs_core::multiplex::{Condition, LightingSchedule};

use crate::config::{require_file, require_input, PipelineConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::Recorder;

/// Sidecar keys describing element files.
pub const STATE_KEY: &str = "state";
pub const MATTE_CHANNEL_KEY: &str = "matte_channel";

/// Sidecar keys describing the lighting schedule of a multiplexed capture.
pub const SCHEDULE_CONDITIONS_KEY: &str = "schedule_conditions";
pub const SCHEDULE_FLASH_RATE_KEY: &str = "schedule_flash_rate";
pub const SCHEDULE_PHASE_KEY: &str = "schedule_phase";
pub const SCHEDULE_SHUTTER_KEY: &str = "schedule_shutter_fraction";

/// Standard frame file name inside an output directory.
pub const FRAME_NAME: &str = "frame.%04d.exr";

pub fn frames_in(dir: &Path) -> String {
    dir.join(FRAME_NAME).to_string_lossy().into_owned()
}

fn record_sequence(rec: &mut Recorder, pattern: &str, indices: &[usize]) -> CliResult<()> {
    let pat = FramePattern::parse(pattern)?;
    rec.inputs(indices.iter().map(|&i| pat.path(i)));
    let sidecar = pat.sidecar_path();
    if sidecar.is_file() {
        rec.input(sidecar);
    }
    Ok(())
}

/// Loads a frame sequence and its sidecar, honouring the config's transfer
/// override.
pub fn load_frames(
    rec: &mut Recorder,
    cfg: &PipelineConfig,
    what: &str,
    pattern: &str,
) -> CliResult<(FrameSequence, SequenceMeta)> {
    require_input(what, pattern)?;
    let (seq, meta) = match cfg.input_transfer()? {
        None => load_sequence_with_meta(pattern)?,
        Some(t) => {
            let seq = load_sequence(pattern, t)?;
            let sidecar = FramePattern::parse(pattern)?.sidecar_path();
            let mut meta = if sidecar.is_file() {
                SequenceMeta::read(&sidecar)?
            } else {
                SequenceMeta::default()
            };
            meta.transfer = t;
            (seq, meta)
        }
    };
    record_sequence(rec, pattern, seq.indices())?;
    Ok((seq, meta))
}

/// Reads a single image, linear unless the config overrides the transfer.
pub fn load_still(
    rec: &mut Recorder,
    cfg: &PipelineConfig,
    what: &str,
    path: &Path,
) -> CliResult<LinearImage> {
    require_file(what, path)?;
    let t = cfg.input_transfer()?.unwrap_or(Transfer::Linear);
    let img = read_image(path, t)?;
    rec.input(path);
    Ok(img)
}

/// A plate that is either one still or one image per frame index.
#[derive(Clone, Debug)]
pub enum PlateSource {
    Still(LinearImage),
    PerFrame(BTreeMap<usize, LinearImage>),
}

impl PlateSource {
    pub fn load(
        rec: &mut Recorder,
        cfg: &PipelineConfig,
        what: &str,
        spec: &str,
    ) -> CliResult<Self> {
        if FramePattern::parse(spec)?.is_numbered() {
            let (seq, _) = load_frames(rec, cfg, what, spec)?;
            let indices = seq.indices().to_vec();
            let map = indices.into_iter().zip(seq.into_frames()).collect();
            Ok(PlateSource::PerFrame(map))
        } else {
            Ok(PlateSource::Still(load_still(
                rec,
                cfg,
                what,
                Path::new(spec),
            )?))
        }
    }

    pub fn at(&self, index: usize, what: &str) -> CliResult<&LinearImage> {
        match self {
            PlateSource::Still(img) => Ok(img),
            PlateSource::PerFrame(map) => map.get(&index).ok_or_else(|| {
                CliError::invalid(what, format!("no frame {index} in the plate sequence"))
            }),
        }
    }

    pub fn map(self, f: impl Fn(&LinearImage) -> CliResult<LinearImage>) -> CliResult<Self> {
        Ok(match self {
            PlateSource::Still(img) => PlateSource::Still(f(&img)?),
            PlateSource::PerFrame(map) => PlateSource::PerFrame(
                map.into_iter()
                    .map(|(i, img)| f(&img).map(|o| (i, o)))
                    .collect::<CliResult<_>>()?,
            ),
        })
    }
}

/// Reads a calibration sidecar; without a path the identity is used unless
/// `required`.
pub fn load_calibration(
    rec: &mut Recorder,
    path: Option<&Path>,
    required: bool,
) -> CliResult<CalibrationMatrix> {
    match path {
        Some(p) => {
            require_file("calibration sidecar", p)?;
            rec.input(p);
            Ok(CalibrationMatrix::read(p)?)
        }
        None if required => Err(CliError::unspecified(
            "calibration sidecar",
            "--calibration",
        )),
        None => Ok(CalibrationMatrix::identity()),
    }
}

/// Writes frames under `pattern` with the given indices and sidecar keys.
#[allow(clippy::too_many_arguments)]
pub fn save_frames(
    rec: &mut Recorder,
    frames: Vec<LinearImage>,
    indices: &[usize],
    rate: f64,
    label: &str,
    pattern: &str,
    opts: &EncodeOptions,
    extra: &BTreeMap<String, String>,
) -> CliResult<()> {
    let seq = FrameSequence::with_indices(frames, indices.to_vec(), rate, label)?;
    let written = save_sequence_with_extra(&seq, pattern, opts, extra)?;
    rec.outputs(written);
    Ok(())
}

/// RGBA packing of a premultiplied element.
pub fn element_to_rgba(elem: &ForegroundElement) -> LinearImage {
    let (w, h) = elem.dims();
    let rgb = elem.rgb();
    let alpha = elem.alpha();
    LinearImage::from_pixel_fn(w, h, 4, |x, y, px| {
        px[..3].copy_from_slice(rgb.pixel(x, y));
        px[3] = alpha.get(x, y, 0);
    })
}

/// Frames of a saved element sequence.
pub struct ElementSequence {
    pub elements: Vec<ForegroundElement>,
    pub indices: Vec<usize>,
    pub frame_rate: f64,
    pub label: String,
}

pub fn save_elements(
    rec: &mut Recorder,
    elements: &[ForegroundElement],
    indices: &[usize],
    rate: f64,
    label: &str,
    pattern: &str,
) -> CliResult<()> {
    let Some(first) = elements.first() else {
        return Err(CliError::invalid("element sequence", "no frames to write"));
    };
    let mut extra = BTreeMap::new();
    extra.insert(STATE_KEY.to_string(), first.state().to_string());
    if let Some(mc) = first.matte_channel() {
        extra.insert(MATTE_CHANNEL_KEY.to_string(), mc.to_string());
    }
    let frames = elements.iter().map(element_to_rgba).collect();
    save_frames(
        rec,
        frames,
        indices,
        rate,
        label,
        pattern,
        &EncodeOptions::linear(),
        &extra,
    )
}

pub fn load_elements(
    rec: &mut Recorder,
    cfg: &PipelineConfig,
    pattern: &str,
) -> CliResult<ElementSequence> {
    let (seq, meta) = load_frames(rec, cfg, "element sequence", pattern)?;
    let state: ColorizationState = match meta.extra.get(STATE_KEY) {
        Some(s) => s.parse()?,
        None => ColorizationState::Reference,
    };
    let mc: Option<MatteChannel> = meta
        .extra
        .get(MATTE_CHANNEL_KEY)
        .map(|s| s.parse())
        .transpose()?;
    let indices = seq.indices().to_vec();
    let (rate, label) = (seq.frame_rate(), seq.label().to_string());
    let elements = seq
        .into_frames()
        .into_iter()
        .map(|img| {
            img.check_channels(4, "element frame (RGBA)")?;
            let rgb =
                LinearImage::from_channels(&[&img.channel(0), &img.channel(1), &img.channel(2)])?;
            ForegroundElement::new(rgb, img.channel(3), state, mc)
        })
        .collect::<mgs_core::Result<Vec<_>>>()?;
    Ok(ElementSequence {
        elements,
        indices,
        frame_rate: rate,
        label,
    })
}

pub fn load_color_mattes(
    rec: &mut Recorder,
    cfg: &PipelineConfig,
    pattern: &str,
) -> CliResult<BTreeMap<usize, ColorMatte>> {
    let (seq, _) = load_frames(rec, cfg, "colour matte sequence", pattern)?;
    let indices = seq.indices().to_vec();
    indices
        .into_iter()
        .zip(seq.into_frames())
        .map(|(i, img)| Ok((i, ColorMatte::new(img)?)))
        .collect()
}

pub fn schedule_extra(s: &LightingSchedule) -> BTreeMap<String, String> {
    let conds: Vec<&str> = s.conditions.iter().map(|c| c.short()).collect();
    BTreeMap::from([
        (SCHEDULE_CONDITIONS_KEY.to_string(), conds.join(",")),
        (
            SCHEDULE_FLASH_RATE_KEY.to_string(),
            s.flash_rate.to_string(),
        ),
        (SCHEDULE_PHASE_KEY.to_string(), s.phase.to_string()),
        (
            SCHEDULE_SHUTTER_KEY.to_string(),
            s.shutter_fraction.to_string(),
        ),
    ])
}

fn number<T: std::str::FromStr>(meta: &SequenceMeta, key: &str) -> CliResult<Option<T>> {
    meta.extra
        .get(key)
        .map(|v| {
            v.parse()
                .map_err(|_| CliError::invalid(format!("sidecar key {key}"), format!("'{v}'")))
        })
        .transpose()
}

/// The schedule recorded in a sidecar, if it names its conditions.
pub fn schedule_from_meta(meta: &SequenceMeta) -> CliResult<Option<LightingSchedule>> {
    let Some(list) = meta.extra.get(SCHEDULE_CONDITIONS_KEY) else {
        return Ok(None);
    };
    let conditions = parse_conditions(list)?;
    let flash_rate = number(meta, SCHEDULE_FLASH_RATE_KEY)?.unwrap_or(meta.frame_rate);
    let phase = number(meta, SCHEDULE_PHASE_KEY)?.unwrap_or(0);
    let shutter =
        number(meta, SCHEDULE_SHUTTER_KEY)?.unwrap_or(0.5 / (flash_rate / meta.frame_rate));
    Ok(Some(LightingSchedule::new(
        conditions,
        flash_rate,
        meta.frame_rate,
        phase,
        shutter,
    )?))
}

pub fn parse_conditions(list: &str) -> CliResult<Vec<Condition>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(CliError::from))
        .collect()
}

/// `x,y,w,h`.
pub fn parse_region(s: &str) -> CliResult<ChartRegion> {
    let nums: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::invalid("region", format!("'{s}' is not x,y,w,h")))?;
    let [x, y, w, h] = nums[..] else {
        return Err(CliError::invalid("region", format!("'{s}' is not x,y,w,h")));
    };
    Ok(ChartRegion::new(x, y, w, h)?)
}

/// `a,b` as two floats.
pub fn parse_pair(what: &str, s: &str) -> CliResult<(f64, f64)> {
    let nums: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::invalid(what, format!("'{s}' is not two numbers")))?;
    match nums[..] {
        [a, b] => Ok((a, b)),
        _ => Err(CliError::invalid(what, format!("'{s}' is not two numbers"))),
    }
}

/// Single-channel view used for flow: the image itself, one channel, or the
/// mean of all channels.
pub fn flow_plane(img: &LinearImage, channel: Option<usize>) -> CliResult<LinearImage> {
    if img.channels() == 1 {
        return Ok(img.clone());
    }
    match channel {
        Some(c) if c < img.channels() => Ok(img.channel(c)),
        Some(c) => Err(CliError::invalid(
            "flow channel",
            format!("{c} is out of range for a {}-channel image", img.channels()),
        )),
        None => {
            let n = img.channels() as f64;
            let data = img.pixels().map(|p| p.iter().sum::<f64>() / n).collect();
            Ok(LinearImage::from_vec(img.width(), img.height(), 1, data)?)
        }
    }
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(rec: &mut Recorder, path: PathBuf, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    rec.output(path);
    Ok(())
}
