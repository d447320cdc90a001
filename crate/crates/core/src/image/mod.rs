//! Linear image buffers and frame sequences.
//!
//! Every value stored here is scene-linear. Transfer curves are applied only
//! when decoding from or encoding to files (see [`io`]). Negative values that
//! arise from subtraction are kept as-is in memory and clamped at encode time.

pub mod io;
mod tone;

pub use tone::{inverse_tonemap, tonemap, Transfer};

use crate::error::{Error, Result};

/// A `width × height × channels` buffer of linear intensities, row-major and
/// pixel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl LinearImage {
    pub const MAX_CHANNELS: usize = 4;

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(
            (1..=Self::MAX_CHANNELS).contains(&channels),
            "unsupported channel count {channels}"
        );
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// An image whose every pixel equals `pixel`.
    pub fn uniform(width: usize, height: usize, pixel: &[f64]) -> Self {
        let mut img = Self::zeros(width, height, pixel.len());
        for px in img.data.chunks_exact_mut(pixel.len()) {
            px.copy_from_slice(pixel);
        }
        img
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if !(1..=Self::MAX_CHANNELS).contains(&channels) {
            return Err(Error::structural(format!(
                "unsupported channel count {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::structural(format!(
                "buffer of {} values does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut img = Self::zeros(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    img.data[(y * width + x) * channels + c] = f(x, y, c);
                }
            }
        }
        img
    }

    /// Builds an image by calling `f` once per pixel with a mutable view of
    /// that pixel's samples. Rows are filled in parallel.
    pub fn from_pixel_fn<F>(width: usize, height: usize, channels: usize, f: F) -> Self
    where
        F: Fn(usize, usize, &mut [f64]) + Sync,
    {
        use rayon::prelude::*;
        let mut img = Self::zeros(width, height, channels);
        if width == 0 {
            return img;
        }
        img.data
            .par_chunks_mut(width * channels)
            .enumerate()
            .for_each(|(y, row)| {
                for (x, px) in row.chunks_exact_mut(channels).enumerate() {
                    f(x, y, px);
                }
            });
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    fn offset(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.offset(x, y) + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) {
        let o = self.offset(x, y);
        self.data[o + c] = value;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let o = self.offset(x, y);
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let o = self.offset(x, y);
        let c = self.channels;
        &mut self.data[o..o + c]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.channels)
    }

    pub fn pixels_mut(&mut self) -> std::slice::ChunksExactMut<'_, f64> {
        self.data.chunks_exact_mut(self.channels)
    }

    pub fn same_shape(&self, other: &LinearImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Fails unless `other` has the same width, height and channel count.
    pub fn check_shape(&self, other: &LinearImage, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::structural(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    /// Fails unless `other` has the same width and height.
    pub fn check_dims(&self, other: &LinearImage, what: &str) -> Result<()> {
        if self.dims() == other.dims() {
            Ok(())
        } else {
            Err(Error::structural(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    pub fn check_channels(&self, channels: usize, what: &str) -> Result<()> {
        if self.channels == channels {
            Ok(())
        } else {
            Err(Error::structural(format!(
                "{what}: expected {channels} channel(s), got {}",
                self.channels
            )))
        }
    }

    /// Applies `f` to every sample.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> LinearImage {
        LinearImage {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Combines two same-shape images sample by sample.
    pub fn zip_map(&self, other: &LinearImage, f: impl Fn(f64, f64) -> f64) -> Result<LinearImage> {
        self.check_shape(other, "zip_map")?;
        Ok(LinearImage {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            ..*self
        })
    }

    /// Copies channel `c` out as a single-channel image.
    pub fn channel(&self, c: usize) -> LinearImage {
        assert!(c < self.channels, "channel {c} out of range");
        LinearImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.pixels().map(|px| px[c]).collect(),
        }
    }

    /// Interleaves single-channel planes into one image.
    pub fn from_channels(planes: &[&LinearImage]) -> Result<LinearImage> {
        let first = planes
            .first()
            .ok_or_else(|| Error::structural("no channels to combine"))?;
        if planes.len() > Self::MAX_CHANNELS {
            return Err(Error::structural("too many channels"));
        }
        for p in planes {
            p.check_channels(1, "from_channels")?;
            first.check_dims(p, "from_channels")?;
        }
        let n = planes.len();
        let mut data = vec![0.0; first.pixel_count() * n];
        for (c, p) in planes.iter().enumerate() {
            for (i, &v) in p.data.iter().enumerate() {
                data[i * n + c] = v;
            }
        }
        LinearImage::from_vec(first.width, first.height, n, data)
    }

    /// Returns a copy with channel `c` replaced by the single-channel `plane`.
    pub fn with_channel(&self, c: usize, plane: &LinearImage) -> Result<LinearImage> {
        plane.check_channels(1, "with_channel")?;
        self.check_dims(plane, "with_channel")?;
        if c >= self.channels {
            return Err(Error::structural(format!("channel {c} out of range")));
        }
        let mut out = self.clone();
        for (px, &v) in out.pixels_mut().zip(&plane.data) {
            px[c] = v;
        }
        Ok(out)
    }

    /// Bilinear sample of channel `c` at continuous coordinates, where pixel
    /// centres sit at integer positions. Coordinates outside the image are
    /// clamped to the border.
    pub fn sample_bilinear(&self, x: f64, y: f64, c: usize) -> f64 {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let x0 = x0 as usize;
        let y0 = y0 as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let top = self.get(x0, y0, c) * (1.0 - fx) + self.get(x1, y0, c) * fx;
        let bottom = self.get(x0, y1, c) * (1.0 - fx) + self.get(x1, y1, c) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Per-channel arithmetic mean over the whole image.
    pub fn channel_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.channels];
        for px in self.pixels() {
            for (s, v) in sums.iter_mut().zip(px) {
                *s += v;
            }
        }
        let n = self.pixel_count().max(1) as f64;
        sums.into_iter().map(|s| s / n).collect()
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Root-mean-square difference over all samples.
    pub fn rms_diff(&self, other: &LinearImage) -> Result<f64> {
        self.check_shape(other, "rms_diff")?;
        let n = self.data.len().max(1) as f64;
        let ss: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok((ss / n).sqrt())
    }

    /// Largest absolute difference over all samples.
    pub fn max_abs_diff(&self, other: &LinearImage) -> Result<f64> {
        self.check_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Per-pixel boolean flags, e.g. validity or diagnostic masks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::structural("mask size mismatch"));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn all(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    pub fn none(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// 1.0 where set, 0.0 elsewhere.
    pub fn to_image(&self) -> LinearImage {
        LinearImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self
                .bits
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        }
    }
}

/// An ordered run of same-shaped frames captured under one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<LinearImage>,
    frame_rate: f64,
    label: String,
    /// Source frame number of each frame; timestamps are `index / frame_rate`.
    indices: Vec<usize>,
}

impl FrameSequence {
    /// A sequence numbered `0..frames.len()`.
    pub fn new(
        frames: Vec<LinearImage>,
        frame_rate: f64,
        label: impl Into<String>,
    ) -> Result<Self> {
        let indices = (0..frames.len()).collect();
        Self::with_indices(frames, indices, frame_rate, label)
    }

    pub fn with_indices(
        frames: Vec<LinearImage>,
        indices: Vec<usize>,
        frame_rate: f64,
        label: impl Into<String>,
    ) -> Result<Self> {
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(Error::Parameter(format!(
                "frame rate must be positive, got {frame_rate}"
            )));
        }
        if indices.len() != frames.len() {
            return Err(Error::structural("frame/index count mismatch"));
        }
        if let Some(first) = frames.first() {
            for (i, f) in frames.iter().enumerate().skip(1) {
                first.check_shape(f, &format!("frame {i} differs from frame 0"))?;
            }
        }
        Ok(Self {
            frames,
            frame_rate,
            label: label.into(),
            indices,
        })
    }

    pub fn frames(&self) -> &[LinearImage] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<LinearImage> {
        self.frames
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Capture time of the `k`-th frame in seconds.
    pub fn timestamp(&self, k: usize) -> f64 {
        self.indices[k] as f64 / self.frame_rate
    }
}
