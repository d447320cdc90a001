//! Image and sequence files.
//!
//! OpenEXR (`.exr`, 32-bit float, scene-linear) is the interchange format.
//! PNG (`.png`, 8 or 16 bit) is supported for display exports. Sequences are
//! addressed by a printf-style pattern such as `mg/frame.%04d.exr` and carry a
//! key=value sidecar next to the frames.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use exr::prelude::{
    read_first_flat_layer_from_file, AnyChannel, AnyChannels, Encoding, FlatSamples, Image, Layer,
    LayerAttributes, WritableImage,
};
use smallvec::SmallVec;

use super::{FrameSequence, LinearImage, Transfer};
use crate::error::{Error, Result};

/// Integer precision used for PNG exports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BitDepth {
    Eight,
    #[default]
    Sixteen,
}

impl BitDepth {
    fn max_code(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct EncodeOptions {
    pub transfer: Transfer,
    /// Only used by integer formats.
    pub depth: BitDepth,
}

impl EncodeOptions {
    pub fn linear() -> Self {
        Self::default()
    }

    pub fn with_transfer(transfer: Transfer) -> Self {
        Self {
            transfer,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum FileFormat {
    Exr,
    Png,
}

fn format_of(path: &Path) -> Result<FileFormat> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("exr") => Ok(FileFormat::Exr),
        Some("png") => Ok(FileFormat::Png),
        _ => Err(Error::Parameter(format!(
            "unsupported image extension: {}",
            path.display()
        ))),
    }
}

/// Integer code for a linear value: clamp to `[0, 1]` after the transfer
/// curve, then round.
pub fn quantize(v: f64, transfer: Transfer, depth: BitDepth) -> u16 {
    let max = depth.max_code();
    (transfer.encode(v).clamp(0.0, 1.0) * max).round() as u16
}

fn channel_names(channels: usize) -> &'static [&'static str] {
    match channels {
        1 => &["Y"],
        2 => &["u", "v"],
        3 => &["R", "G", "B"],
        _ => &["R", "G", "B", "A"],
    }
}

fn channel_rank(name: &str) -> usize {
    match name {
        "R" | "Y" | "u" | "forward.u" => 0,
        "G" | "v" | "forward.v" => 1,
        "B" => 2,
        "A" => 3,
        _ => 4,
    }
}

/// Reads an image file and linearizes it with `transfer`.
pub fn read_image(path: impl AsRef<Path>, transfer: Transfer) -> Result<LinearImage> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    let img = match format_of(path)? {
        FileFormat::Exr => read_exr(path)?,
        FileFormat::Png => read_png(path)?,
    };
    Ok(match transfer {
        Transfer::Linear => img,
        t => img.map(|v| t.decode(v)),
    })
}

fn read_exr(path: &Path) -> Result<LinearImage> {
    let decode_err = |e: exr::error::Error| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let image = read_first_flat_layer_from_file(path).map_err(decode_err)?;
    let layer = image.layer_data;
    let (w, h) = (layer.size.width(), layer.size.height());
    let mut list: Vec<_> = layer.channel_data.list.iter().collect();
    list.sort_by_key(|ch| (channel_rank(&ch.name.to_string()), ch.name.to_string()));
    let n = list.len();
    if n == 0 || n > LinearImage::MAX_CHANNELS {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            message: format!("unsupported channel count {n}"),
        });
    }
    let mut data = vec![0.0; w * h * n];
    for (c, ch) in list.iter().enumerate() {
        for (i, v) in ch.sample_data.values_as_f32().enumerate() {
            data[i * n + c] = v as f64;
        }
    }
    LinearImage::from_vec(w, h, n, data)
}

fn read_png(path: &Path) -> Result<LinearImage> {
    use image::DynamicImage;
    let dynimg = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let (channels, data): (usize, Vec<f64>) = match dynimg {
        DynamicImage::ImageLuma8(b) => {
            (1, b.into_raw().iter().map(|&v| v as f64 / 255.0).collect())
        }
        DynamicImage::ImageLuma16(b) => (
            1,
            b.into_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
        ),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw().iter().map(|&v| v as f64 / 255.0).collect()),
        other if other.color().bytes_per_pixel() / other.color().channel_count() == 1 => {
            let b = other.to_rgb8();
            (3, b.into_raw().iter().map(|&v| v as f64 / 255.0).collect())
        }
        other => {
            let b = other.to_rgb16();
            (
                3,
                b.into_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
            )
        }
    };
    LinearImage::from_vec(w, h, channels, data)
}

/// Writes `img` to `path`, creating parent directories.
pub fn write_image(img: &LinearImage, path: impl AsRef<Path>, opts: &EncodeOptions) -> Result<()> {
    let path = path.as_ref();
    opts.transfer.validate()?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    match format_of(path)? {
        FileFormat::Exr => write_exr(img, path, opts.transfer),
        FileFormat::Png => write_png(img, path, opts),
    }
}

fn write_exr(img: &LinearImage, path: &Path, transfer: Transfer) -> Result<()> {
    write_exr_channels(img, path, channel_names(img.channels()), transfer)
}

/// Writes a float EXR with explicit channel names, e.g. `["R", "B"]` for a
/// plane pair that [`read_image`] should load in that order.
pub fn write_exr_named(
    img: &LinearImage,
    path: impl AsRef<Path>,
    names: &[&str],
    transfer: Transfer,
) -> Result<()> {
    let path = path.as_ref();
    if names.len() != img.channels() {
        return Err(Error::structural(format!(
            "{} channel names for a {}-channel image",
            names.len(),
            img.channels()
        )));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_exr_channels(img, path, names, transfer)
}

fn write_exr_channels(
    img: &LinearImage,
    path: &Path,
    names: &[&str],
    transfer: Transfer,
) -> Result<()> {
    let mut list: SmallVec<[AnyChannel<FlatSamples>; 4]> = SmallVec::new();
    for (c, name) in names.iter().enumerate() {
        let samples: Vec<f32> = img
            .pixels()
            .map(|px| transfer.encode(px[c]) as f32)
            .collect();
        list.push(AnyChannel::new(*name, FlatSamples::F32(samples)));
    }
    let layer = Layer::new(
        (img.width(), img.height()),
        LayerAttributes::named("main"),
        Encoding::FAST_LOSSLESS,
        AnyChannels::sort(list),
    );
    Image::from_layer(layer)
        .write()
        .to_file(path)
        .map_err(|e| Error::Encode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

fn write_png(img: &LinearImage, path: &Path, opts: &EncodeOptions) -> Result<()> {
    use image::{ImageBuffer, Luma, Rgb};
    let (w, h) = (img.width() as u32, img.height() as u32);
    let codes: Vec<u16> = img
        .data()
        .iter()
        .map(|&v| quantize(v, opts.transfer, opts.depth))
        .collect();
    let encode_err = |e: image::ImageError| Error::Encode {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let short = || Error::structural("pixel buffer size");
    match (img.channels(), opts.depth) {
        (1, BitDepth::Eight) => {
            let raw = codes.iter().map(|&c| c as u8).collect();
            ImageBuffer::<Luma<u8>, Vec<u8>>::from_raw(w, h, raw)
                .ok_or_else(short)?
                .save(path)
                .map_err(encode_err)
        }
        (1, BitDepth::Sixteen) => ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(w, h, codes)
            .ok_or_else(short)?
            .save(path)
            .map_err(encode_err),
        (3, BitDepth::Eight) => {
            let raw = codes.iter().map(|&c| c as u8).collect();
            ImageBuffer::<Rgb<u8>, Vec<u8>>::from_raw(w, h, raw)
                .ok_or_else(short)?
                .save(path)
                .map_err(encode_err)
        }
        (3, BitDepth::Sixteen) => ImageBuffer::<Rgb<u16>, Vec<u16>>::from_raw(w, h, codes)
            .ok_or_else(short)?
            .save(path)
            .map_err(encode_err),
        (n, _) => Err(Error::structural(format!(
            "PNG export supports 1 or 3 channels, got {n}"
        ))),
    }
}

/// A file-name template with an optional `%d` / `%0Nd` frame token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FramePattern {
    prefix: String,
    pad: usize,
    suffix: String,
    numbered: bool,
}

impl FramePattern {
    pub fn parse(pattern: &str) -> Result<Self> {
        let Some(start) = pattern.find('%') else {
            return Ok(Self {
                prefix: pattern.to_string(),
                pad: 0,
                suffix: String::new(),
                numbered: false,
            });
        };
        let rest = &pattern[start + 1..];
        let end = rest
            .find('d')
            .ok_or_else(|| Error::Parameter(format!("bad frame token in '{pattern}'")))?;
        let spec = &rest[..end];
        let pad = if spec.is_empty() {
            0
        } else {
            spec.trim_start_matches('0')
                .parse::<usize>()
                .map_err(|_| Error::Parameter(format!("bad frame token in '{pattern}'")))?
        };
        let suffix = &rest[end + 1..];
        if suffix.contains('%') {
            return Err(Error::Parameter(format!(
                "more than one frame token in '{pattern}'"
            )));
        }
        Ok(Self {
            prefix: pattern[..start].to_string(),
            pad,
            suffix: suffix.to_string(),
            numbered: true,
        })
    }

    /// True when the pattern contains a frame token.
    pub fn is_numbered(&self) -> bool {
        self.numbered
    }

    pub fn path(&self, index: usize) -> PathBuf {
        if !self.numbered {
            return PathBuf::from(&self.prefix);
        }
        PathBuf::from(format!(
            "{}{:0width$}{}",
            self.prefix,
            index,
            self.suffix,
            width = self.pad
        ))
    }

    fn split_dir(&self) -> (PathBuf, String) {
        let p = Path::new(&self.prefix);
        if self.prefix.ends_with('/') {
            return (p.to_path_buf(), String::new());
        }
        let dir = p
            .parent()
            .map(Path::to_path_buf)
            .filter(|d| !d.as_os_str().is_empty())
            .unwrap_or_else(|| PathBuf::from("."));
        let stem = p
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default();
        (dir, stem)
    }

    /// Frame numbers present on disk, ascending.
    pub fn discover(&self) -> Result<Vec<usize>> {
        if !self.numbered {
            return Ok(if Path::new(&self.prefix).exists() {
                vec![0]
            } else {
                vec![]
            });
        }
        let (dir, stem) = self.split_dir();
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(vec![]),
            Err(e) => return Err(Error::io(dir, e)),
        };
        let mut found = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(middle) = name
                .strip_prefix(&stem)
                .and_then(|r| r.strip_suffix(&self.suffix))
            else {
                continue;
            };
            if middle.is_empty() || !middle.bytes().all(|b| b.is_ascii_digit()) {
                continue;
            }
            if self.pad > 0 && middle.len() < self.pad {
                continue;
            }
            if let Ok(i) = middle.parse::<usize>() {
                found.push(i);
            }
        }
        found.sort_unstable();
        found.dedup();
        Ok(found)
    }

    /// Location of the sequence's key=value sidecar.
    ///
    /// `mg/frame.%04d.exr` maps to `mg/frame.meta`; a pattern whose file name
    /// starts with the token maps to `sequence.meta` in the same directory.
    pub fn sidecar_path(&self) -> PathBuf {
        let (dir, stem) = self.split_dir();
        let base: &str = if self.numbered {
            &stem
        } else {
            Path::new(&self.prefix)
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("")
        };
        let base = base.trim_end_matches(['.', '_', '-']);
        let base = if base.is_empty() { "sequence" } else { base };
        dir.join(format!("{base}.meta"))
    }
}

/// Contents of a sequence sidecar file.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceMeta {
    pub frame_rate: f64,
    pub label: String,
    pub transfer: Transfer,
    /// Any other keys, e.g. lighting-schedule parameters.
    pub extra: BTreeMap<String, String>,
}

impl Default for SequenceMeta {
    fn default() -> Self {
        Self {
            frame_rate: 24.0,
            label: "unlabeled".into(),
            transfer: Transfer::Linear,
            extra: BTreeMap::new(),
        }
    }
}

impl SequenceMeta {
    pub fn parse(text: &str) -> Result<Self> {
        let mut meta = SequenceMeta::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parameter(format!("sidecar line {}: expected key=value", n + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "frame_rate" => {
                    meta.frame_rate = value
                        .parse()
                        .map_err(|_| Error::Parameter(format!("bad frame_rate '{value}'")))?
                }
                "label" => meta.label = value.to_string(),
                "transfer" => meta.transfer = value.parse()?,
                _ => {
                    meta.extra.insert(key.to_string(), value.to_string());
                }
            }
        }
        Ok(meta)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "frame_rate={}\nlabel={}\ntransfer={}\n",
            self.frame_rate, self.label, self.transfer
        );
        for (k, v) in &self.extra {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Sidecar key listing the frame numbers of a sequence with gaps.
pub const FRAMES_KEY: &str = "frames";

fn parse_frame_list(list: &str) -> Result<Vec<usize>> {
    let mut out = list
        .split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Parameter(format!("bad frame number '{t}' in sidecar")))
        })
        .collect::<Result<Vec<usize>>>()?;
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Loads every frame matching `pattern`, linearized with `transfer`.
///
/// Frame rate and label come from the sidecar when one exists. Frame numbers
/// must be contiguous unless the sidecar lists them under `frames`; a gap is
/// reported as the missing index.
pub fn load_sequence(pattern: &str, transfer: Transfer) -> Result<FrameSequence> {
    let (seq, _) = load_with_meta(pattern, Some(transfer))?;
    Ok(seq)
}

/// Like [`load_sequence`] but takes the transfer curve from the sidecar and
/// returns the sidecar alongside the frames.
pub fn load_sequence_with_meta(pattern: &str) -> Result<(FrameSequence, SequenceMeta)> {
    load_with_meta(pattern, None)
}

fn load_with_meta(
    pattern: &str,
    transfer: Option<Transfer>,
) -> Result<(FrameSequence, SequenceMeta)> {
    let pat = FramePattern::parse(pattern)?;
    let sidecar = pat.sidecar_path();
    let mut meta = if sidecar.exists() {
        SequenceMeta::read(&sidecar)?
    } else {
        SequenceMeta::default()
    };
    let indices = match meta.extra.get(FRAMES_KEY) {
        Some(list) => parse_frame_list(list)?,
        None => pat.discover()?,
    };
    let (Some(&first), Some(&last)) = (indices.first(), indices.last()) else {
        return Err(Error::EmptySequence(pattern.to_string()));
    };
    if !meta.extra.contains_key(FRAMES_KEY) && indices.len() != last - first + 1 {
        let missing = (first..=last)
            .find(|i| indices.binary_search(i).is_err())
            .unwrap_or(first);
        return Err(Error::MissingFrame {
            index: missing,
            path: pat.path(missing),
        });
    }
    if let Some(t) = transfer {
        meta.transfer = t;
    }
    let mut frames = Vec::with_capacity(indices.len());
    for &i in &indices {
        let path = pat.path(i);
        let img = read_image(&path, meta.transfer).map_err(|e| match e {
            Error::Io { .. } => Error::MissingFrame { index: i, path },
            e => e,
        })?;
        frames.push(img);
    }
    let seq = FrameSequence::with_indices(frames, indices, meta.frame_rate, meta.label.clone())?;
    Ok((seq, meta))
}

/// Writes every frame of `seq` plus its sidecar.
pub fn save_sequence(
    seq: &FrameSequence,
    pattern: &str,
    opts: &EncodeOptions,
) -> Result<Vec<PathBuf>> {
    save_sequence_with_extra(seq, pattern, opts, &BTreeMap::new())
}

/// [`save_sequence`] with additional sidecar keys.
pub fn save_sequence_with_extra(
    seq: &FrameSequence,
    pattern: &str,
    opts: &EncodeOptions,
    extra: &BTreeMap<String, String>,
) -> Result<Vec<PathBuf>> {
    let pat = FramePattern::parse(pattern)?;
    if !pat.is_numbered() && seq.len() > 1 {
        return Err(Error::Parameter(format!(
            "pattern '{pattern}' has no frame token but the sequence has {} frames",
            seq.len()
        )));
    }
    let mut written = Vec::with_capacity(seq.len());
    for (frame, &i) in seq.frames().iter().zip(seq.indices()) {
        let path = pat.path(i);
        write_image(frame, &path, opts)?;
        written.push(path);
    }
    let mut meta = SequenceMeta {
        frame_rate: seq.frame_rate(),
        label: seq.label().to_string(),
        transfer: opts.transfer,
        extra: extra.clone(),
    };
    let contiguous = seq.indices().windows(2).all(|w| w[1] == w[0] + 1);
    if !contiguous {
        let list: Vec<String> = seq.indices().iter().map(|i| i.to_string()).collect();
        meta.extra.insert(FRAMES_KEY.to_string(), list.join(","));
    }
    let sidecar = pat.sidecar_path();
    meta.write(&sidecar)?;
    written.push(sidecar);
    Ok(written)
}
