//! Dense optical flow.
//!
//! A coarse-to-fine Horn–Schunck estimator: brightness constancy linearized
//! around the current estimate, a quadratic smoothness term, Jacobi
//! iterations, and repeated warping of the second image at each pyramid
//! level. Flow is stored as a 2-channel image `(u, v)` in pixels with the
//! convention `a(x) ≈ b(x + flow(x))`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::io::{read_image, write_image, EncodeOptions};
use crate::image::{LinearImage, Transfer};

/// Mean gradient magnitude below which an input is considered textureless.
pub const MIN_TEXTURE: f64 = 1e-4;

/// Pyramid levels never shrink below this many pixels on a side.
const MIN_LEVEL_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    /// Pyramid depth, at least 1.
    pub levels: usize,
    /// Jacobi iterations after each warp, at least 1.
    pub iterations_per_level: usize,
    /// Warps per pyramid level, at least 1.
    pub warps_per_level: usize,
    /// Weight of the smoothness term, non-negative. Relative to squared
    /// intensity gradients, so it depends on the image scale; the default
    /// suits display-range values near `[0, 1]`.
    pub smoothness: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            levels: 5,
            iterations_per_level: 100,
            warps_per_level: 3,
            smoothness: 3e-2,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Parameter("flow levels must be at least 1".into()));
        }
        if self.iterations_per_level == 0 || self.warps_per_level == 0 {
            return Err(Error::Parameter(
                "flow iterations must be at least 1".into(),
            ));
        }
        if !(self.smoothness >= 0.0 && self.smoothness.is_finite()) {
            return Err(Error::Parameter(format!(
                "smoothness must be non-negative, got {}",
                self.smoothness
            )));
        }
        Ok(())
    }
}

/// Per-pixel displacement between two frames.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    field: LinearImage,
    pub source: usize,
    pub target: usize,
    /// Set when the inputs carried too little texture to constrain the flow.
    pub low_confidence: bool,
}

impl FlowField {
    pub fn new(field: LinearImage) -> Result<Self> {
        field.check_channels(2, "flow field")?;
        if field.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::structural("flow field contains non-finite values"));
        }
        Ok(Self {
            field,
            source: 0,
            target: 1,
            low_confidence: false,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(LinearImage::zeros(width, height, 2)).expect("zero field is valid")
    }

    /// The same displacement everywhere.
    pub fn uniform(width: usize, height: usize, u: f64, v: f64) -> Self {
        Self::new(LinearImage::uniform(width, height, &[u, v])).expect("finite")
    }

    pub fn with_frames(mut self, source: usize, target: usize) -> Self {
        self.source = source;
        self.target = target;
        self
    }

    pub fn field(&self) -> &LinearImage {
        &self.field
    }

    pub fn dims(&self) -> (usize, usize) {
        self.field.dims()
    }

    pub fn u(&self) -> LinearImage {
        self.field.channel(0)
    }

    pub fn v(&self) -> LinearImage {
        self.field.channel(1)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let p = self.field.pixel(x, y);
        (p[0], p[1])
    }

    /// Every vector multiplied by `s`.
    pub fn scaled(&self, s: f64) -> FlowField {
        FlowField {
            field: self.field.map(|v| v * s),
            ..self.clone()
        }
    }

    /// Mean `(u, v)` ignoring a border of `margin` pixels.
    pub fn mean_flow(&self, margin: usize) -> (f64, f64) {
        let (w, h) = self.dims();
        let mut sum = (0.0, 0.0);
        let mut n = 0usize;
        for y in margin..h.saturating_sub(margin) {
            for x in margin..w.saturating_sub(margin) {
                let (u, v) = self.at(x, y);
                sum.0 += u;
                sum.1 += v;
                n += 1;
            }
        }
        let n = n.max(1) as f64;
        (sum.0 / n, sum.1 / n)
    }

    pub fn max_magnitude(&self) -> f64 {
        self.field
            .pixels()
            .map(|p| p[0].hypot(p[1]))
            .fold(0.0, f64::max)
    }

    pub fn mean_magnitude(&self) -> f64 {
        let n = self.field.pixel_count().max(1) as f64;
        self.field.pixels().map(|p| p[0].hypot(p[1])).sum::<f64>() / n
    }

    /// Reads a 2-channel float image (`u`, `v`).
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(read_image(path, Transfer::Linear)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_image(&self.field, path, &EncodeOptions::linear())
    }
}

/// Anything that can produce a flow field from two single-channel frames.
pub trait FlowEstimator: Sync {
    fn estimate(&self, a: &LinearImage, b: &LinearImage) -> Result<FlowField>;
}

impl FlowEstimator for FlowConfig {
    fn estimate(&self, a: &LinearImage, b: &LinearImage) -> Result<FlowField> {
        estimate_flow(a, b, self)
    }
}

/// A flow computed elsewhere, e.g. loaded from an external tool's output.
#[derive(Clone, Debug)]
pub struct PrecomputedFlow(pub FlowField);

impl FlowEstimator for PrecomputedFlow {
    fn estimate(&self, a: &LinearImage, _b: &LinearImage) -> Result<FlowField> {
        if self.0.dims() != a.dims() {
            return Err(Error::structural(
                "precomputed flow does not match frame size",
            ));
        }
        Ok(self.0.clone())
    }
}

/// `out(x) = img(x + scale·flow(x))`, bilinear and edge-clamped.
pub fn warp(img: &LinearImage, flow: &FlowField, scale: f64) -> Result<LinearImage> {
    if img.dims() != flow.dims() {
        return Err(Error::structural(format!(
            "warp: image {}x{} vs flow {}x{}",
            img.width(),
            img.height(),
            flow.dims().0,
            flow.dims().1
        )));
    }
    if scale == 0.0 {
        return Ok(img.clone());
    }
    let (w, h) = img.dims();
    Ok(LinearImage::from_pixel_fn(
        w,
        h,
        img.channels(),
        |x, y, px| {
            let (u, v) = flow.at(x, y);
            let sx = x as f64 + scale * u;
            let sy = y as f64 + scale * v;
            for (c, out) in px.iter_mut().enumerate() {
                *out = img.sample_bilinear(sx, sy, c);
            }
        },
    ))
}

/// Mean central-difference gradient magnitude.
pub fn texture_level(img: &LinearImage) -> f64 {
    let (w, h) = img.dims();
    if w < 3 || h < 3 {
        return 0.0;
    }
    let mut sum = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = 0.5 * (img.get(x + 1, y, 0) - img.get(x - 1, y, 0));
            let gy = 0.5 * (img.get(x, y + 1, 0) - img.get(x, y - 1, 0));
            sum += gx.hypot(gy);
        }
    }
    sum / ((w - 2) * (h - 2)) as f64
}

const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

fn blur_binomial(img: &LinearImage) -> LinearImage {
    let (w, h) = img.dims();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let horiz = LinearImage::from_pixel_fn(w, h, 1, |x, y, px| {
        px[0] = BINOMIAL
            .iter()
            .enumerate()
            .map(|(k, wgt)| wgt * img.get(clamp(x as isize + k as isize - 2, w), y, 0))
            .sum();
    });
    LinearImage::from_pixel_fn(w, h, 1, |x, y, px| {
        px[0] = BINOMIAL
            .iter()
            .enumerate()
            .map(|(k, wgt)| wgt * horiz.get(x, clamp(y as isize + k as isize - 2, h), 0))
            .sum();
    })
}

fn downsample(img: &LinearImage) -> LinearImage {
    let blurred = blur_binomial(img);
    let (w, h) = img.dims();
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    LinearImage::from_fn(nw, nh, 1, |x, y, _| blurred.get(2 * x, 2 * y, 0))
}

fn upsample_flow(coarse: &LinearImage, w: usize, h: usize) -> LinearImage {
    let (cw, ch) = coarse.dims();
    let sx = w as f64 / cw as f64;
    let sy = h as f64 / ch as f64;
    LinearImage::from_pixel_fn(w, h, 2, |x, y, px| {
        let cx = x as f64 / 2.0;
        let cy = y as f64 / 2.0;
        px[0] = coarse.sample_bilinear(cx, cy, 0) * sx;
        px[1] = coarse.sample_bilinear(cx, cy, 1) * sy;
    })
}

fn gradients(img: &LinearImage) -> (LinearImage, LinearImage) {
    let (w, h) = img.dims();
    let last_x = w - 1;
    let last_y = h - 1;
    let gx = LinearImage::from_pixel_fn(w, h, 1, |x, y, px| {
        let l = x.saturating_sub(1);
        let r = (x + 1).min(last_x);
        let span = (r - l).max(1) as f64;
        px[0] = (img.get(r, y, 0) - img.get(l, y, 0)) / span;
    });
    let gy = LinearImage::from_pixel_fn(w, h, 1, |x, y, px| {
        let t = y.saturating_sub(1);
        let b = (y + 1).min(last_y);
        let span = (b - t).max(1) as f64;
        px[0] = (img.get(x, b, 0) - img.get(x, t, 0)) / span;
    });
    (gx, gy)
}

/// Horn–Schunck neighbourhood average: 1/6 for edge neighbours, 1/12 for
/// diagonal ones, edge-clamped.
#[inline]
fn neighbour_mean(f: &LinearImage, x: usize, y: usize, c: usize) -> f64 {
    let (w, h) = f.dims();
    let xl = x.saturating_sub(1);
    let xr = (x + 1).min(w - 1);
    let yt = y.saturating_sub(1);
    let yb = (y + 1).min(h - 1);
    (f.get(xl, y, c) + f.get(xr, y, c) + f.get(x, yt, c) + f.get(x, yb, c)) / 6.0
        + (f.get(xl, yt, c) + f.get(xr, yt, c) + f.get(xl, yb, c) + f.get(xr, yb, c)) / 12.0
}

fn refine_level(
    a: &LinearImage,
    b: &LinearImage,
    init: LinearImage,
    cfg: &FlowConfig,
) -> LinearImage {
    let (w, h) = a.dims();
    let lambda = cfg.smoothness;
    let mut flow = init;
    for _ in 0..cfg.warps_per_level {
        let base = FlowField {
            field: flow.clone(),
            source: 0,
            target: 1,
            low_confidence: false,
        };
        let bw = warp(b, &base, 1.0).expect("same dims");
        let mean = a.zip_map(&bw, |p, q| 0.5 * (p + q)).expect("same dims");
        let (ix, iy) = gradients(&mean);
        let it = bw.zip_map(a, |p, q| p - q).expect("same dims");
        // Samples that land outside the frame carry no evidence.
        let inside = LinearImage::from_pixel_fn(w, h, 1, |x, y, px| {
            let sx = x as f64 + flow.get(x, y, 0);
            let sy = y as f64 + flow.get(x, y, 1);
            let ok = sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f64 && sy <= (h - 1) as f64;
            px[0] = if ok { 1.0 } else { 0.0 };
        });
        let u0 = flow.clone();
        for _ in 0..cfg.iterations_per_level {
            let prev = flow;
            flow = LinearImage::from_pixel_fn(w, h, 2, |x, y, px| {
                let ub = neighbour_mean(&prev, x, y, 0);
                let vb = neighbour_mean(&prev, x, y, 1);
                let m = inside.get(x, y, 0);
                let gx = m * ix.get(x, y, 0);
                let gy = m * iy.get(x, y, 0);
                let (du, dv) = (ub - u0.get(x, y, 0), vb - u0.get(x, y, 1));
                let residual = gx * du + gy * dv + m * it.get(x, y, 0);
                let denom = lambda + gx * gx + gy * gy;
                if denom > 0.0 {
                    let k = residual / denom;
                    px[0] = ub - gx * k;
                    px[1] = vb - gy * k;
                } else {
                    px[0] = ub;
                    px[1] = vb;
                }
            });
        }
    }
    flow
}

/// Estimates flow from `a` to `b` (single-channel, same size).
pub fn estimate_flow(a: &LinearImage, b: &LinearImage, cfg: &FlowConfig) -> Result<FlowField> {
    cfg.validate()?;
    a.check_channels(1, "flow input")?;
    a.check_shape(b, "flow inputs")?;
    let (w, h) = a.dims();
    if w == 0 || h == 0 {
        return Err(Error::structural("flow inputs are empty"));
    }

    let mut pyr_a = vec![a.clone()];
    let mut pyr_b = vec![b.clone()];
    while pyr_a.len() < cfg.levels {
        let last = pyr_a.last().expect("non-empty");
        if last.width() < 2 * MIN_LEVEL_SIZE || last.height() < 2 * MIN_LEVEL_SIZE {
            break;
        }
        let next_a = downsample(last);
        let next_b = downsample(pyr_b.last().expect("non-empty"));
        pyr_a.push(next_a);
        pyr_b.push(next_b);
    }

    let coarsest = pyr_a.last().expect("non-empty");
    let mut flow = LinearImage::zeros(coarsest.width(), coarsest.height(), 2);
    for level in (0..pyr_a.len()).rev() {
        let (la, lb) = (&pyr_a[level], &pyr_b[level]);
        if flow.dims() != la.dims() {
            flow = upsample_flow(&flow, la.width(), la.height());
        }
        flow = refine_level(la, lb, flow, cfg);
    }

    let mut field = FlowField::new(flow)?;
    field.low_confidence = texture_level(a).max(texture_level(b)) < MIN_TEXTURE;
    Ok(field)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Period, direction, phase and amplitude of a broadband test texture.
    const WAVES: [(f64, f64, f64, f64); 7] = [
        (97.0, 0.3, 0.9, 0.10),
        (61.0, 2.1, 0.2, 0.09),
        (43.0, 1.2, 2.5, 0.08),
        (29.0, 2.8, 1.7, 0.07),
        (19.0, 0.7, 0.4, 0.06),
        (13.0, 1.9, 3.0, 0.05),
        (9.0, 0.1, 1.3, 0.04),
    ];

    /// Broadband texture whose content is displaced by `(dx, dy)`.
    pub(crate) fn texture(w: usize, h: usize, dx: f64, dy: f64) -> LinearImage {
        use std::f64::consts::TAU;
        LinearImage::from_fn(w, h, 1, |x, y, _| {
            let x = x as f64 - dx;
            let y = y as f64 - dy;
            0.5 + WAVES
                .iter()
                .map(|&(p, th, ph, a)| a * (TAU * (x * th.cos() + y * th.sin()) / p + ph).sin())
                .sum::<f64>()
        })
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let a = texture(64, 48, 0.0, 0.0);
        let f = estimate_flow(&a, &a, &FlowConfig::default()).unwrap();
        assert!(f.max_magnitude() < 1e-3);
        assert!(!f.low_confidence);
    }

    #[test]
    fn integer_shift_is_recovered() {
        let a = texture(128, 128, 0.0, 0.0);
        let b = texture(128, 128, 4.0, -3.0);
        let f = estimate_flow(&a, &b, &FlowConfig::default()).unwrap();
        let (u, v) = f.mean_flow(16);
        assert!(
            (u - 4.0).abs() < 0.5 && (v + 3.0).abs() < 0.5,
            "mean flow ({u}, {v})"
        );
    }

    #[test]
    fn subpixel_shift_is_recovered() {
        let a = texture(128, 128, 0.0, 0.0);
        let b = texture(128, 128, 0.5, 0.0);
        let f = estimate_flow(&a, &b, &FlowConfig::default()).unwrap();
        let (u, v) = f.mean_flow(16);
        assert!(
            (u - 0.5).abs() < 0.25 && v.abs() < 0.25,
            "mean flow ({u}, {v})"
        );
    }

    #[test]
    fn estimation_is_deterministic() {
        let a = texture(64, 64, 0.0, 0.0);
        let b = texture(64, 64, 2.0, -1.0);
        let cfg = FlowConfig::default();
        assert_eq!(
            estimate_flow(&a, &b, &cfg).unwrap(),
            estimate_flow(&a, &b, &cfg).unwrap()
        );
    }

    #[test]
    fn flat_frames_are_low_confidence() {
        let a = LinearImage::filled(32, 32, 1, 0.0);
        let f = estimate_flow(&a, &a, &FlowConfig::default()).unwrap();
        assert!(f.low_confidence);
        assert!(f.max_magnitude() < 1e-3);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let a = LinearImage::zeros(16, 16, 1);
        let b = LinearImage::zeros(17, 16, 1);
        assert!(matches!(
            estimate_flow(&a, &b, &FlowConfig::default()),
            Err(Error::Structural(_))
        ));
        let rgb = LinearImage::zeros(16, 16, 3);
        assert!(estimate_flow(&rgb, &rgb, &FlowConfig::default()).is_err());
        let cfg = FlowConfig {
            levels: 0,
            ..FlowConfig::default()
        };
        assert!(estimate_flow(&a, &a, &cfg).is_err());
    }

    #[test]
    fn warp_scale_zero_and_integer_shift() {
        let img = LinearImage::from_fn(8, 6, 3, |x, y, c| (x * 10 + y + c * 100) as f64);
        let flow = FlowField::uniform(8, 6, 2.0, 1.0);
        assert_eq!(warp(&img, &flow, 0.0).unwrap(), img);
        let out = warp(&img, &flow, 1.0).unwrap();
        for y in 0..5 {
            for x in 0..6 {
                assert_eq!(out.pixel(x, y), img.pixel(x + 2, y + 1));
            }
        }
    }

    #[test]
    fn warp_round_trip_on_smooth_gradient() {
        let img = LinearImage::from_fn(64, 64, 1, |x, y, _| {
            0.2 + 0.5 * x as f64 / 63.0 + 0.2 * (y as f64 / 9.0).sin()
        });
        let flow = LinearImage::from_fn(64, 64, 2, |x, y, c| {
            if c == 0 {
                1.5 * (y as f64 / 20.0).sin()
            } else {
                0.7 * (x as f64 / 15.0).cos()
            }
        });
        let flow = FlowField::new(flow).unwrap();
        let there = warp(&img, &flow, 1.0).unwrap();
        let back = warp(&there, &flow, -1.0).unwrap();
        let rms = back.rms_diff(&img).unwrap();
        let level = img.data().iter().map(|v| v * v).sum::<f64>() / img.data().len() as f64;
        assert!(
            rms / level.sqrt() < 0.02,
            "relative rms {}",
            rms / level.sqrt()
        );
    }

    #[test]
    fn flow_is_translation_equivariant() {
        let cfg = FlowConfig::default();
        let f1 =
            estimate_flow(&texture(80, 80, 0.0, 0.0), &texture(80, 80, 3.0, 1.0), &cfg).unwrap();
        let f2 =
            estimate_flow(&texture(80, 80, 5.0, 2.0), &texture(80, 80, 8.0, 3.0), &cfg).unwrap();
        let (u1, v1) = f1.mean_flow(16);
        let (u2, v2) = f2.mean_flow(16);
        assert!((u1 - u2).abs() < 0.25 && (v1 - v2).abs() < 0.25);
    }

    #[test]
    fn flow_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flow.exr");
        let f = FlowField::uniform(5, 4, 1.25, -0.5);
        f.write(&path).unwrap();
        let back = FlowField::read(&path).unwrap();
        assert_eq!(back.field(), f.field());
    }
}
